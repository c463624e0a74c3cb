#include "shadeadapt/freeze.hpp"

#include "shadeadapt/errors.hpp"

#include <algorithm>
#include <iomanip>
#include <map>
#include <sstream>

namespace shadeadapt {

const std::vector<std::string> kBaseGroups = {
    "image_encoder",          "prompt_encoder",           "mask_decoder",
    "prompt_generator.backbone", "prompt_generator.decoder",
};

namespace {

bool has_prefix(const std::string& name, const std::string& prefix) {
  return name.size() > prefix.size() && name.compare(0, prefix.size(), prefix) == 0 &&
         name[prefix.size()] == '.';
}

bool is_adapter_group(const std::string& g) {
  return g.rfind("image_encoder.blocks.", 0) == 0 &&
         (g.ends_with(".adapter1") || g.ends_with(".adapter2"));
}

// Adapter group of a parameter name, e.g. image_encoder.blocks.3.adapter1.
std::string adapter_group_for(const std::string& name) {
  const std::string head = "image_encoder.blocks.";
  if (name.rfind(head, 0) != 0) return {};
  const size_t idx_end = name.find('.', head.size());
  if (idx_end == std::string::npos) return {};
  const size_t mod_end = name.find('.', idx_end + 1);
  if (mod_end == std::string::npos) return {};
  std::string candidate = name.substr(0, mod_end);
  return is_adapter_group(candidate) ? candidate : std::string{};
}

std::string join(const std::vector<std::string>& v) {
  std::ostringstream os;
  for (size_t i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v[i];
  return os.str();
}

}  // namespace

std::vector<std::string> parameter_groups(const torch::nn::Module& model) {
  std::vector<std::string> groups;
  auto add = [&groups](const std::string& g) {
    if (std::find(groups.begin(), groups.end(), g) == groups.end()) groups.push_back(g);
  };
  for (const auto& item : model.named_parameters(true)) {
    const std::string& name = item.key();
    std::string g = adapter_group_for(name);
    if (g.empty()) {
      for (const auto& base : kBaseGroups) {
        if (has_prefix(name, base)) g = base;
      }
    }
    if (g.empty()) {
      throw InternalError("parameter '" + name + "' belongs to no known group");
    }
    add(g);
  }
  return groups;
}

std::string group_of(const std::string& parameter_name, const std::vector<std::string>& groups) {
  std::string best;
  for (const auto& g : groups) {
    if (has_prefix(parameter_name, g) && g.size() > best.size()) best = g;
  }
  return best;
}

FreezePolicy FreezePolicy::standard(const torch::nn::Module& model, bool freeze_backbone) {
  FreezeFlags flags;
  flags.backbone = freeze_backbone;
  return policy_from_flags(model, flags);
}

FreezePolicy FreezePolicy::all_frozen(const torch::nn::Module& model) {
  FreezePolicy p;
  for (const auto& g : parameter_groups(model)) p.frozen_groups.insert(g);
  return p;
}

FreezePolicy policy_from_flags(const torch::nn::Module& model, const FreezeFlags& flags) {
  FreezePolicy p;
  for (const auto& g : parameter_groups(model)) {
    bool frozen = false;
    if (is_adapter_group(g)) {
      frozen = flags.adapters;
    } else if (g == "image_encoder") {
      frozen = flags.encoder_base;
    } else if (g == "prompt_encoder") {
      frozen = flags.prompt_encoder;
    } else if (g == "mask_decoder") {
      frozen = flags.mask_decoder;
    } else if (g == "prompt_generator.backbone") {
      frozen = flags.backbone;
    } else if (g == "prompt_generator.decoder") {
      frozen = flags.prompt_decoder;
    }
    (frozen ? p.frozen_groups : p.trainable_groups).insert(g);
  }
  return p;
}

namespace {

void validate_policy(const std::vector<std::string>& groups, const FreezePolicy& policy) {
  auto known = [&groups](const std::string& g) {
    return std::find(groups.begin(), groups.end(), g) != groups.end();
  };
  for (const auto* set : {&policy.trainable_groups, &policy.frozen_groups}) {
    for (const auto& g : *set) {
      if (!known(g)) {
        throw ConfigError("unknown parameter group '" + g + "'; valid groups: " + join(groups));
      }
    }
  }
  for (const auto& g : policy.trainable_groups) {
    if (policy.frozen_groups.count(g)) {
      throw ConfigError("parameter group '" + g + "' is both trainable and frozen");
    }
  }
  for (const auto& g : groups) {
    if (!policy.trainable_groups.count(g) && !policy.frozen_groups.count(g)) {
      throw ConfigError("freeze policy does not assign parameter group '" + g + "'");
    }
  }
}

// Sets eval mode on every submodule whose parameters and buffers all lie in
// frozen groups. Returns true when the whole subtree is frozen.
bool freeze_modes(torch::nn::Module& module, const std::string& prefix,
                  const std::vector<std::string>& groups, const FreezePolicy& policy) {
  bool all_frozen = true;
  for (const auto& p : module.named_parameters(false)) {
    const std::string name = prefix.empty() ? p.key() : prefix + "." + p.key();
    if (policy.is_trainable(group_of(name, groups))) all_frozen = false;
  }
  for (const auto& child : module.named_children()) {
    const std::string name = prefix.empty() ? child.key() : prefix + "." + child.key();
    // A subtree with no parameters (activations) inherits its parent's state.
    if (!freeze_modes(*child.value(), name, groups, policy) &&
        !child.value()->parameters(true).empty()) {
      all_frozen = false;
    }
  }
  if (all_frozen && !module.parameters(true).empty()) module.eval();
  return all_frozen;
}

}  // namespace

void apply_freeze_policy(torch::nn::Module& model, const FreezePolicy& policy) {
  const auto groups = parameter_groups(model);
  validate_policy(groups, policy);
  for (auto& item : model.named_parameters(true)) {
    item.value().set_requires_grad(policy.is_trainable(group_of(item.key(), groups)));
  }
  freeze_modes(model, "", groups, policy);
}

void reapply_frozen_modes(torch::nn::Module& model, const FreezePolicy& policy) {
  freeze_modes(model, "", parameter_groups(model), policy);
}

std::vector<torch::Tensor> trainable_parameters(const torch::nn::Module& model) {
  std::vector<torch::Tensor> out;
  for (const auto& p : model.parameters(true)) {
    if (p.requires_grad()) out.push_back(p);
  }
  return out;
}

Census parameter_census(const torch::nn::Module& model, const FreezePolicy& policy) {
  const auto groups = parameter_groups(model);
  std::map<std::string, int64_t> counts;
  for (const auto& item : model.named_parameters(true)) {
    counts[group_of(item.key(), groups)] += item.value().numel();
  }
  Census c;
  for (const auto& g : groups) {
    CensusRow row{g, counts[g], policy.is_trainable(g)};
    (row.trainable ? c.trainable_count : c.frozen_count) += row.count;
    c.rows.push_back(row);
  }
  return c;
}

std::string Census::to_table() const {
  size_t width = 5;
  for (const auto& r : rows) width = std::max(width, r.group.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(width)) << "group" << "  " << std::right
     << std::setw(12) << "parameters" << "  trainable\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(static_cast<int>(width)) << r.group << "  " << std::right
       << std::setw(12) << r.count << "  " << (r.trainable ? "yes" : "no") << "\n";
  }
  os << "trainable: " << trainable_count << "\nfrozen:    " << frozen_count
     << "\ntotal:     " << total() << "\n";
  return os.str();
}

std::string Census::to_csv() const {
  std::ostringstream os;
  os << "group,count,trainable\n";
  for (const auto& r : rows) {
    os << r.group << "," << r.count << "," << (r.trainable ? 1 : 0) << "\n";
  }
  return os.str();
}

}  // namespace shadeadapt
