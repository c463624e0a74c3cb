#pragma once

#include "shadeadapt/dataset.hpp"
#include "shadeadapt/freeze.hpp"
#include "shadeadapt/losses.hpp"
#include "shadeadapt/model.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace shadeadapt {

struct TrainConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int64_t batch_size = 4;
  uint64_t seed = 0;
  /// Stop after this many optimizer steps; 0 runs the profile's epochs.
  int64_t max_steps = 0;
  double coarse_weight = 1.0;
  double final_weight = 1.0;
  FreezeFlags freeze;
  bool augment = true;
  AugmentConfig augmentation;

  void validate() const;
};

/// Everything a command needs, merged from one flat key = value file.
struct RunConfig {
  std::string preset = "vit_b";  // vit_b or toy
  DatasetProfile profile;
  TrainConfig train;
  ModelConfig model = ModelConfig::vit_b();
  std::string eval_split = "test";  // test, val, train or none
  double threshold = 0.5;
  BerAggregation aggregation = BerAggregation::PerImage;
  std::filesystem::path run_dir;
  std::filesystem::path base_checkpoint;      // foundation weights (optional)
  std::filesystem::path backbone_checkpoint;  // pyramid backbone weights (optional)
  uint64_t base_seed = 0;                     // init of weights no file provides

  void validate() const;
  NormalizeSpec normalize_spec() const;
};

/// Key order used when echoing a config.
std::vector<std::string> config_keys();

/// Strict parse: unknown keys, duplicates, malformed values and failed
/// range checks throw ConfigError naming the key. `name` and `root` are
/// required unless `require_dataset` is false.
RunConfig parse_config_text(const std::string& text, bool require_dataset = true);
RunConfig parse_config(const std::filesystem::path& path, bool require_dataset = true);

/// Every key with its effective value; parses back to an equal config.
std::string config_to_text(const RunConfig& cfg);

/// Applies key = value pairs on top of an existing config, then validates.
RunConfig with_overrides(const RunConfig& base,
                         const std::vector<std::pair<std::string, std::string>>& overrides);

/// Field-by-field comparison; returns the keys that differ.
std::vector<std::string> config_differences(const RunConfig& a, const RunConfig& b);

/// Keys that change the network's shape or its frozen weights.
const std::vector<std::string>& architecture_keys();

/// Closest known key within a small edit distance, or empty.
std::string suggest_key(const std::string& unknown);

}  // namespace shadeadapt
