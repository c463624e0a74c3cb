#pragma once

#include "shadeadapt/image_encoder.hpp"
#include "shadeadapt/prompt_generator.hpp"
#include "shadeadapt/sam.hpp"
#include "shadeadapt/sampling.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

namespace shadeadapt {

/// Parses "none", "point", "box", "mask" or a '+'-joined combination.
std::vector<PromptKind> parse_prompt_kinds(const std::string& text);
std::string prompt_kinds_name(const std::vector<PromptKind>& kinds);

struct ModelConfig {
  EncoderConfig encoder;
  PromptEncoderConfig prompt_encoder;
  MaskDecoderConfig mask_decoder;
  BackboneDescriptor backbone;
  DecoderConfig decoder;
  int64_t coarse_size = 256;
  /// Empty: no prompts, the prompt generator is not run.
  std::vector<PromptKind> prompts{PromptKind::Point};
  SamplingConfig sampling;

  /// Full-size model: ViT-B encoder, B1 pyramid.
  static ModelConfig vit_b();
  /// Small stand-in for tests and desk runs (64x64 input).
  static ModelConfig toy();

  int64_t input_size() const { return encoder.img_size; }
  PromptGeometry geometry() const;
  void validate() const;
};

struct ForwardOutput {
  torch::Tensor coarse_logits;  // (B, 1, m, m); undefined without prompts
  torch::Tensor coarse_probs;   // (B, m, m)
  torch::Tensor final_logits;   // (B, 1, S, S)
  std::vector<PromptSet> prompts;
};

/// Adapted encoder, prompt encoder and mask decoder plus the coarse-mask
/// prompt generator. Submodule names match the foundation checkpoint.
class ShadowModelImpl : public torch::nn::Module {
 public:
  explicit ShadowModelImpl(const ModelConfig& cfg);

  /// images: (B, 3, S, S) normalized.
  ForwardOutput forward(const torch::Tensor& images);

  /// Prompt tensors for one image in encoder-input coordinates.
  EncodedPromptInput encode_prompts(const PromptSet& set) const;

  const ModelConfig& config() const { return cfg_; }

  ImageEncoder image_encoder{nullptr};
  PromptEncoder prompt_encoder{nullptr};
  MaskDecoder mask_decoder{nullptr};
  PromptGenerator prompt_generator{nullptr};

 private:
  ModelConfig cfg_;
};
TORCH_MODULE(ShadowModel);

struct WeightLoadReport {
  int64_t loaded = 0;
  std::vector<std::string> skipped;  // keys in the file with no matching parameter
  std::vector<std::string> missing;  // model entries under the prefix not in the file
};

/// Loads a state dict saved with torch.save into the entries of `model`
/// whose names start with `target_prefix`. Keys in the file are prefixed
/// with `target_prefix` first; keys beginning with any of `drop_prefixes`
/// are ignored. Shape mismatches throw LoadError.
WeightLoadReport load_state_dict_file(torch::nn::Module& model, const std::filesystem::path& path,
                                      const std::string& target_prefix,
                                      const std::vector<std::string>& drop_prefixes = {});

/// Name -> tensor for every parameter and buffer.
std::vector<std::pair<std::string, torch::Tensor>> named_state(const torch::nn::Module& model);

}  // namespace shadeadapt
