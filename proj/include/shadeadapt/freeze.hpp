#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <set>
#include <string>
#include <vector>

namespace shadeadapt {

/// Parameter groups are dotted module paths, e.g. `image_encoder` (the
/// base weights), `image_encoder.blocks.3.adapter1`, `mask_decoder`,
/// `prompt_generator.backbone`. A parameter belongs to the longest group
/// that prefixes its name at a dot boundary.
std::vector<std::string> parameter_groups(const torch::nn::Module& model);

/// Group of a single named parameter given the group list.
std::string group_of(const std::string& parameter_name, const std::vector<std::string>& groups);

/// The groups every model defines beyond its adapter groups. Any of them
/// may be missing from a particular build (e.g. a model without a prompt
/// generator); parameter_groups() only returns those that hold parameters.
extern const std::vector<std::string> kBaseGroups;

struct FreezePolicy {
  std::set<std::string> trainable_groups;
  std::set<std::string> frozen_groups;

  /// Adapters, mask decoder and prompt-generator decoder train; the encoder
  /// base, prompt encoder and the prompt-generator backbone stay frozen.
  static FreezePolicy standard(const torch::nn::Module& model, bool freeze_backbone = true);
  static FreezePolicy all_frozen(const torch::nn::Module& model);

  bool is_trainable(const std::string& group) const { return trainable_groups.count(group) > 0; }
};

struct FreezeFlags {
  bool backbone = true;
  bool encoder_base = true;
  bool prompt_encoder = true;
  bool adapters = false;
  bool mask_decoder = false;
  bool prompt_decoder = false;

  bool operator==(const FreezeFlags&) const = default;
};

FreezePolicy policy_from_flags(const torch::nn::Module& model, const FreezeFlags& flags);

/// Validates the policy against the model (disjoint, covering, no unknown
/// names) and sets requires_grad accordingly. Modules that lie entirely in
/// frozen groups are also switched to eval mode so their buffers (batch
/// norm statistics) stay fixed; call reapply_frozen_modes() after any
/// model->train().
void apply_freeze_policy(torch::nn::Module& model, const FreezePolicy& policy);
void reapply_frozen_modes(torch::nn::Module& model, const FreezePolicy& policy);

/// Parameters with requires_grad set, in registration order.
std::vector<torch::Tensor> trainable_parameters(const torch::nn::Module& model);

struct CensusRow {
  std::string group;
  int64_t count = 0;
  bool trainable = false;
};

struct Census {
  int64_t trainable_count = 0;
  int64_t frozen_count = 0;
  std::vector<CensusRow> rows;

  int64_t total() const { return trainable_count + frozen_count; }
  /// Aligned plain-text table with a totals footer.
  std::string to_table() const;
  /// `group,count,trainable` rows with a header line.
  std::string to_csv() const;
};

Census parameter_census(const torch::nn::Module& model, const FreezePolicy& policy);

}  // namespace shadeadapt
