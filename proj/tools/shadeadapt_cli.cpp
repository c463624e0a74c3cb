#include "shadeadapt/c_api.h"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

struct Failure {
  sa_status status;
  std::string message;
};

void check(sa_status s) {
  if (s != SA_OK) throw Failure{s, sa_last_error()};
}

std::string take(char* s) {
  std::string out = s ? s : "";
  sa_string_free(s);
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Failure{SA_ERR_IO, "cannot read " + path};
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

using ConfigPtr = std::unique_ptr<sa_config, decltype(&sa_config_free)>;
using ModelPtr = std::unique_ptr<sa_model, decltype(&sa_model_free)>;

ConfigPtr make_config(const std::vector<std::string>& files, const std::vector<std::string>& sets,
                      bool require_dataset) {
  std::string text;
  for (const auto& f : files) text += read_file(f) + "\n";
  sa_config* raw = nullptr;
  check(sa_config_parse(text.c_str(), require_dataset && sets.empty() ? 1 : 0, &raw));
  ConfigPtr cfg(raw, sa_config_free);
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Failure{SA_ERR_CONFIG, "--set expects key=value, got " + kv};
    check(sa_config_set(cfg.get(), kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()));
  }
  if (require_dataset && !sets.empty()) {
    // Re-parse strictly now that overrides are in.
    char* t = nullptr;
    check(sa_config_to_text(cfg.get(), &t));
    std::string full = take(t);
    check(sa_config_parse(full.c_str(), 1, &raw));
    cfg.reset(raw);
  }
  return cfg;
}

ModelPtr load_model(const std::string& checkpoint, sa_config* cfg) {
  sa_model* m = nullptr;
  check(sa_model_load(checkpoint.c_str(), cfg, &m));
  return ModelPtr(m, sa_model_free);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shadow detection with an adapted promptable segmentation model"};
  app.require_subcommand(1);

  std::string config, profile, checkpoint, image, dir, out, matrix, preset = "vit_b";
  std::vector<std::string> sets;
  int64_t count = 8, size = 64;
  uint64_t seed = 0;

  auto* train = app.add_subcommand("train", "train adapters, mask decoder and prompt decoder");
  train->add_option("--config,-c", config, "run config")->required()->check(CLI::ExistingFile);
  train->add_option("--profile,-p", profile, "dataset profile merged into the config")
      ->check(CLI::ExistingFile);
  train->add_option("--set", sets, "key=value override (repeatable)");

  auto* infer = app.add_subcommand("infer", "predict shadow masks");
  infer->add_option("--checkpoint,-k", checkpoint, "trained checkpoint")->required();
  auto* img_opt = infer->add_option("--image,-i", image, "single image");
  auto* dir_opt = infer->add_option("--dir,-d", dir, "directory of images");
  img_opt->excludes(dir_opt);
  infer->add_option("--config,-c", config, "config the checkpoint must match");
  infer->add_option("--out,-o", out, "output directory")->default_val("predictions");

  auto* eval = app.add_subcommand("eval", "balanced error rate on a dataset split");
  eval->add_option("--checkpoint,-k", checkpoint, "trained checkpoint")->required();
  eval->add_option("--profile,-p", profile, "dataset profile (name, root, split)")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--config,-c", config, "config the checkpoint must match");
  eval->add_option("--out,-o", out, "report directory")->default_val("reports");

  auto* sample = app.add_subcommand("sample-points", "prompt points from a coarse mask");
  sample->add_option("--image,-i", image, "image, or a grey coarse mask without --checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  sample->add_option("--checkpoint,-k", checkpoint, "checkpoint whose prompt generator to run");
  sample->add_option("--config,-c", config, "sampling settings");
  sample->add_option("--set", sets, "key=value override (repeatable)");
  sample->add_option("--out,-o", out, "output directory")->default_val("points");

  auto* ablate = app.add_subcommand("ablate", "train and evaluate an ablation matrix");
  ablate->add_option("--matrix,-m", matrix, "components, grid, topk or a matrix file")->required();
  ablate->add_option("--config,-c", config, "base run config")->required()->check(CLI::ExistingFile);
  ablate->add_option("--set", sets, "key=value override (repeatable)");
  ablate->add_option("--out,-o", out, "output directory")->default_val("ablation");

  auto* census = app.add_subcommand("census", "trainable / frozen parameter counts");
  census->add_option("--checkpoint,-k", checkpoint, "checkpoint to inspect");
  census->add_option("--config,-c", config, "config to build");
  census->add_option("--preset", preset, "vit_b or toy when no config is given");
  census->add_option("--set", sets, "key=value override (repeatable)");

  auto* synth = app.add_subcommand("synth", "write a synthetic image/mask dataset");
  synth->add_option("--root,-r", dir, "output root (images/, masks/)")->required();
  synth->add_option("--count,-n", count, "pairs")->default_val(8);
  synth->add_option("--size,-s", size, "side in pixels")->default_val(64);
  synth->add_option("--seed", seed, "random seed")->default_val(0);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      std::vector<std::string> files{config};
      if (!profile.empty()) files.push_back(profile);
      ConfigPtr cfg = make_config(files, sets, true);
      char* summary = nullptr;
      check(sa_train(cfg.get(), &summary));
      std::cout << take(summary);
    } else if (*infer) {
      ConfigPtr cfg(nullptr, sa_config_free);
      if (!config.empty()) cfg = make_config({config}, {}, false);
      ModelPtr model = load_model(checkpoint, cfg.get());
      std::vector<std::string> images;
      if (!image.empty()) {
        images.push_back(image);
      } else if (!dir.empty()) {
        for (const auto& e : fs::directory_iterator(dir)) {
          if (e.is_regular_file()) images.push_back(e.path().string());
        }
        std::sort(images.begin(), images.end());
      } else {
        throw Failure{SA_ERR_REQUEST, "infer needs --image or --dir"};
      }
      nlohmann::json all = nlohmann::json::array();
      for (const auto& path : images) {
        char* res = nullptr;
        check(sa_infer_file(model.get(), path.c_str(), out.c_str(), &res));
        all.push_back(nlohmann::json::parse(take(res)));
      }
      std::cout << all.dump(2) << "\n";
    } else if (*eval) {
      ConfigPtr cfg(nullptr, sa_config_free);
      if (!config.empty()) cfg = make_config({config}, {}, false);
      ModelPtr model = load_model(checkpoint, cfg.get());
      ConfigPtr data = make_config({profile}, {}, true);
      char* table = nullptr;
      check(sa_evaluate(model.get(), data.get(), out.c_str(), nullptr, &table));
      std::cout << take(table);
      std::cout << "wrote " << (fs::path(out) / "eval.csv").string() << " and eval.json\n";
    } else if (*sample) {
      ConfigPtr cfg(nullptr, sa_config_free);
      if (!config.empty() || !sets.empty()) {
        std::vector<std::string> files;
        if (!config.empty()) files.push_back(config);
        cfg = make_config(files, sets, false);
      }
      ModelPtr model(nullptr, sa_model_free);
      if (!checkpoint.empty()) model = load_model(checkpoint, nullptr);
      char* pts = nullptr;
      check(sa_sample_points_file(model.get(), cfg.get(), image.c_str(), out.c_str(), &pts));
      std::cout << take(pts);
    } else if (*ablate) {
      ConfigPtr cfg = make_config({config}, sets, true);
      char* table = nullptr;
      check(sa_ablate(cfg.get(), matrix.c_str(), out.c_str(), nullptr, &table));
      std::cout << take(table);
      std::cout << "wrote " << (fs::path(out) / "ablation.csv").string() << " and ablation.json\n";
    } else if (*census) {
      ConfigPtr cfg(nullptr, sa_config_free);
      ModelPtr model(nullptr, sa_model_free);
      if (!checkpoint.empty()) {
        model = load_model(checkpoint, nullptr);
      } else if (!config.empty()) {
        cfg = make_config({config}, sets, false);
      } else {
        cfg = make_config({}, sets, false);
        check(sa_config_set(cfg.get(), "preset", preset.c_str()));
      }
      char* table = nullptr;
      char* csv = nullptr;
      int64_t trainable = 0, total = 0;
      check(sa_census(cfg.get(), model.get(), &table, &csv, &trainable, &total));
      take(csv);
      std::cout << take(table);
      if (!model) {
        char* text = nullptr;
        check(sa_config_to_text(cfg.get(), &text));
        if (take(text).find("base_checkpoint = \n") != std::string::npos) {
          std::cout << "notice: no foundation checkpoint configured; counts follow from the "
                       "architecture, weights are random\n";
        }
      }
    } else if (*synth) {
      check(sa_synthesize(dir.c_str(), count, size, seed));
      std::cout << "wrote " << count << " pairs under " << dir << "\n";
    }
  } catch (const Failure& f) {
    std::string msg = f.message;
    for (char& c : msg) {
      if (c == '\n') c = ' ';
    }
    std::cerr << "error[" << sa_status_name(f.status) << "]: " << msg << "\n";
    return static_cast<int>(f.status);
  }
  return 0;
}
