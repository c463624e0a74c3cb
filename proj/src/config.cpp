#include "shadeadapt/config.hpp"

#include "shadeadapt/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace shadeadapt {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + " must be a number, got '" + v + "'");
  }
}

int64_t to_int(const std::string& key, const std::string& v) {
  int64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(key + " must be an integer, got '" + v + "'");
  }
  return out;
}

uint64_t to_uint(const std::string& key, const std::string& v) {
  uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(key + " must be a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + " must be true or false, got '" + v + "'");
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

struct KeySpec {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
  bool architecture = false;
};

#define SA_DOUBLE(key, field, arch)                                                     \
  KeySpec {                                                                             \
    key, [](RunConfig& c, const std::string& v) { c.field = to_double(key, v); },       \
        [](const RunConfig& c) { return fmt_double(c.field); }, arch                    \
  }
#define SA_INT(key, field, arch)                                                        \
  KeySpec {                                                                             \
    key, [](RunConfig& c, const std::string& v) { c.field = to_int(key, v); },          \
        [](const RunConfig& c) { return std::to_string(c.field); }, arch                \
  }
#define SA_UINT(key, field, arch)                                                       \
  KeySpec {                                                                             \
    key, [](RunConfig& c, const std::string& v) { c.field = to_uint(key, v); },         \
        [](const RunConfig& c) { return std::to_string(c.field); }, arch                \
  }
#define SA_BOOL(key, field, arch)                                                       \
  KeySpec {                                                                             \
    key, [](RunConfig& c, const std::string& v) { c.field = to_bool(key, v); },         \
        [](const RunConfig& c) { return fmt_bool(c.field); }, arch                      \
  }
#define SA_PATH(key, field, arch)                                                       \
  KeySpec {                                                                             \
    key, [](RunConfig& c, const std::string& v) { c.field = v; },                       \
        [](const RunConfig& c) { return c.field.string(); }, arch                       \
  }

const std::vector<KeySpec>& key_table() {
  static const std::vector<KeySpec> table = {
      {"preset", [](RunConfig&, const std::string&) {},
       [](const RunConfig& c) { return c.preset; }, true},
      {"name", [](RunConfig&, const std::string&) {},
       [](const RunConfig& c) { return c.profile.name; }, false},
      SA_PATH("root", profile.root, false),
      {"split", [](RunConfig& c, const std::string& v) { c.profile.split = v; },
       [](const RunConfig& c) { return c.profile.split; }, false},
      SA_DOUBLE("alpha", profile.focal.alpha, false),
      SA_DOUBLE("gamma", profile.focal.gamma, false),
      SA_INT("epochs", profile.epochs, false),
      SA_DOUBLE("learning_rate", train.learning_rate, false),
      SA_DOUBLE("beta1", train.beta1, false),
      SA_DOUBLE("beta2", train.beta2, false),
      SA_INT("batch_size", train.batch_size, false),
      SA_UINT("seed", train.seed, false),
      SA_INT("max_steps", train.max_steps, false),
      SA_DOUBLE("coarse_weight", train.coarse_weight, false),
      SA_DOUBLE("final_weight", train.final_weight, false),
      SA_BOOL("freeze_backbone", train.freeze.backbone, true),
      SA_BOOL("freeze_encoder_base", train.freeze.encoder_base, true),
      SA_BOOL("freeze_prompt_encoder", train.freeze.prompt_encoder, true),
      SA_BOOL("freeze_adapters", train.freeze.adapters, true),
      SA_BOOL("freeze_mask_decoder", train.freeze.mask_decoder, true),
      SA_BOOL("freeze_prompt_decoder", train.freeze.prompt_decoder, true),
      SA_BOOL("adapter_mha", model.encoder.adapter_mha, true),
      SA_BOOL("adapter_ffn", model.encoder.adapter_ffn, true),
      SA_DOUBLE("adapter_ratio", model.encoder.adapter_ratio, true),
      SA_DOUBLE("adapter_scale", model.encoder.adapter_scale, true),
      {"backbone",
       [](RunConfig& c, const std::string& v) {
         if (v == "toy") {
           c.model.backbone = BackboneDescriptor::toy();
         } else if (v == "efficientnet_b1") {
           c.model.backbone = BackboneDescriptor::efficientnet_b1();
         } else {
           throw ConfigError("backbone must be efficientnet_b1 or toy, got '" + v + "'");
         }
       },
       [](const RunConfig& c) { return c.model.backbone.name; }, true},
      SA_INT("top_channels", model.decoder.top_channels, true),
      SA_INT("coarse_size", model.coarse_size, true),
      {"prompt",
       [](RunConfig& c, const std::string& v) { c.model.prompts = parse_prompt_kinds(v); },
       [](const RunConfig& c) { return prompt_kinds_name(c.model.prompts); }, true},
      {"strategy",
       [](RunConfig& c, const std::string& v) { c.model.sampling.strategy = parse_strategy(v); },
       [](const RunConfig& c) { return std::string(strategy_name(c.model.sampling.strategy)); },
       true},
      SA_INT("k", model.sampling.k, true),
      SA_INT("grid_size", model.sampling.grid_size, true),
      SA_DOUBLE("tau", model.sampling.tau, true),
      SA_INT("n_pos", model.sampling.n_pos, true),
      SA_INT("n_neg", model.sampling.n_neg, true),
      SA_BOOL("augment", train.augment, false),
      SA_DOUBLE("crop_min", train.augmentation.crop_min, false),
      SA_DOUBLE("crop_max", train.augmentation.crop_max, false),
      SA_DOUBLE("flip_prob", train.augmentation.flip_prob, false),
      {"eval_split", [](RunConfig& c, const std::string& v) { c.eval_split = v; },
       [](const RunConfig& c) { return c.eval_split; }, false},
      SA_DOUBLE("threshold", threshold, false),
      {"ber_aggregation",
       [](RunConfig& c, const std::string& v) {
         if (v == "per_image") {
           c.aggregation = BerAggregation::PerImage;
         } else if (v == "pixel_pooled") {
           c.aggregation = BerAggregation::PixelPooled;
         } else {
           throw ConfigError("ber_aggregation must be per_image or pixel_pooled, got '" + v + "'");
         }
       },
       [](const RunConfig& c) {
         return std::string(c.aggregation == BerAggregation::PerImage ? "per_image"
                                                                      : "pixel_pooled");
       },
       false},
      SA_PATH("run_dir", run_dir, false),
      SA_PATH("base_checkpoint", base_checkpoint, true),
      SA_PATH("backbone_checkpoint", backbone_checkpoint, true),
      SA_UINT("base_seed", base_seed, true),
  };
  return table;
}

#undef SA_DOUBLE
#undef SA_INT
#undef SA_UINT
#undef SA_BOOL
#undef SA_PATH

size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (size_t j = 1; j <= b.size(); ++j) {
      const size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

using KeyValues = std::map<std::string, std::string>;

KeyValues read_pairs(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value, got '" + t +
                        "'");
    }
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    const auto& table = key_table();
    if (std::none_of(table.begin(), table.end(), [&](const KeySpec& s) { return s.name == key; })) {
      std::string msg = "unknown key '" + key + "'";
      std::string hint = suggest_key(key);
      if (!hint.empty()) msg += " (did you mean '" + hint + "'?)";
      throw ConfigError(msg);
    }
    if (!kv.emplace(key, value).second) throw ConfigError("key '" + key + "' given twice");
  }
  return kv;
}

RunConfig build(const KeyValues& kv, bool require_dataset) {
  RunConfig cfg;
  auto get = [&](const std::string& k) -> const std::string* {
    auto it = kv.find(k);
    return it == kv.end() ? nullptr : &it->second;
  };
  if (const auto* p = get("preset")) cfg.preset = *p;
  if (cfg.preset == "toy") {
    cfg.model = ModelConfig::toy();
  } else if (cfg.preset == "vit_b") {
    cfg.model = ModelConfig::vit_b();
  } else {
    throw ConfigError("preset must be vit_b or toy, got '" + cfg.preset + "'");
  }
  const std::string* name = get("name");
  if (!name && require_dataset) throw ConfigError("required key 'name' is missing");
  DatasetProfile defaults = DatasetProfile::defaults_for(name ? *name : "custom");
  cfg.profile = defaults;
  const std::string* root = get("root");
  if (!root && require_dataset) throw ConfigError("required key 'root' is missing");

  for (const auto& spec : key_table()) {
    if (const auto* v = get(spec.name)) spec.set(cfg, *v);
  }
  if (cfg.run_dir.empty()) cfg.run_dir = std::filesystem::path("runs") / cfg.profile.name;
  if (require_dataset && cfg.profile.root.empty()) {
    throw ConfigError("required key 'root' is empty");
  }
  cfg.validate();
  return cfg;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be positive");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must lie in [0,1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must lie in [0,1)");
  if (batch_size < 1) throw ConfigError("batch_size must be a positive integer");
  if (max_steps < 0) throw ConfigError("max_steps must be non-negative");
  if (!(coarse_weight >= 0.0) || !(final_weight >= 0.0)) {
    throw ConfigError("coarse_weight and final_weight must be non-negative");
  }
  augmentation.validate();
}

void RunConfig::validate() const {
  profile.validate();
  train.validate();
  model.validate();
  if (eval_split != "test" && eval_split != "val" && eval_split != "train" &&
      eval_split != "none") {
    throw ConfigError("eval_split must be one of test, val, train, none");
  }
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0,1)");
}

NormalizeSpec RunConfig::normalize_spec() const {
  NormalizeSpec s;
  s.input_size = model.input_size();
  s.mask_size = model.input_size();
  s.mean = model.encoder.pixel_mean;
  s.std = model.encoder.pixel_std;
  return s;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& s : key_table()) out.push_back(s.name);
  return out;
}

RunConfig parse_config_text(const std::string& text, bool require_dataset) {
  return build(read_pairs(text), require_dataset);
}

RunConfig parse_config(const std::filesystem::path& path, bool require_dataset) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), require_dataset);
}

std::string config_to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& s : key_table()) out += s.name + " = " + s.get(cfg) + "\n";
  return out;
}

RunConfig with_overrides(const RunConfig& base,
                         const std::vector<std::pair<std::string, std::string>>& overrides) {
  KeyValues kv = read_pairs(config_to_text(base));
  const bool reset = std::any_of(overrides.begin(), overrides.end(), [&](const auto& o) {
    return (o.first == "preset" || o.first == "name") && kv.count(o.first) && kv[o.first] != o.second;
  });
  if (reset) {
    // Keep only what differs from the old preset/profile defaults so the
    // new ones can fill in the rest.
    const KeyValues defaults = read_pairs(config_to_text(
        build({{"preset", kv["preset"]}, {"name", kv["name"]}}, false)));
    for (auto it = kv.begin(); it != kv.end();) {
      const bool keep = it->first == "preset" || it->first == "name" ||
                        defaults.at(it->first) != it->second;
      it = keep ? std::next(it) : kv.erase(it);
    }
  }
  for (const auto& [k, v] : overrides) {
    if (!kv.count(k)) {
      std::string msg = "unknown key '" + k + "'";
      std::string hint = suggest_key(k);
      if (!hint.empty()) msg += " (did you mean '" + hint + "'?)";
      throw ConfigError(msg);
    }
    kv[k] = v;
  }
  return build(kv, !base.profile.root.empty());
}

std::vector<std::string> config_differences(const RunConfig& a, const RunConfig& b) {
  std::vector<std::string> out;
  for (const auto& s : key_table()) {
    if (s.get(a) != s.get(b)) out.push_back(s.name);
  }
  return out;
}

const std::vector<std::string>& architecture_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& s : key_table()) {
      if (s.architecture) k.push_back(s.name);
    }
    return k;
  }();
  return keys;
}

std::string suggest_key(const std::string& unknown) {
  std::string best;
  size_t best_d = std::max<size_t>(2, unknown.size() / 3) + 1;
  for (const auto& s : key_table()) {
    const size_t d = edit_distance(unknown, s.name);
    if (d < best_d) {
      best_d = d;
      best = s.name;
    }
  }
  return best;
}

}  // namespace shadeadapt
