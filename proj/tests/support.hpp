#pragma once

#include "shadeadapt/config.hpp"
#include "shadeadapt/synthetic.hpp"

#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <unistd.h>

namespace support {

namespace fs = std::filesystem;

// Fresh scratch directory, removed when the object dies.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("sa_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

inline fs::path synthetic(const fs::path& root, int64_t count, uint64_t seed = 0) {
  shadeadapt::write_synthetic_dataset(root, {count, 64, seed});
  return root;
}

inline shadeadapt::RunConfig toy_config(const fs::path& data, const fs::path& run_dir,
                                        const std::map<std::string, std::string>& extra = {}) {
  std::map<std::string, std::string> kv = {{"name", "custom"},
                                           {"eval_split", "none"},
                                           {"epochs", "1"},
                                           {"root", data.string()},
                                           {"run_dir", run_dir.string()}};
  for (const auto& [k, v] : extra) kv[k] = v;
  std::string text = "preset = toy\n";
  for (const auto& [k, v] : kv) text += k + " = " + v + "\n";
  return shadeadapt::parse_config_text(text);
}

}  // namespace support
