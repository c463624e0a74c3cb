#pragma once

#include <torch/torch.h>

#include <string>
#include <vector>

namespace shadeadapt {

inline constexpr int kPyramidLevels = 5;

/// Describes the feature extractor feeding the prompt generator.
struct BackboneDescriptor {
  std::string name = "efficientnet_b1";  // or "toy"
  std::vector<int64_t> channels{16, 24, 40, 112, 1280};
  std::vector<int64_t> strides{2, 4, 8, 16, 32};
  bool frozen = true;

  void validate() const;

  static BackboneDescriptor efficientnet_b1();
  static BackboneDescriptor toy();
};

/// Five feature maps, finest first. Each level is NCHW.
struct FeaturePyramid {
  std::vector<torch::Tensor> levels;
  std::vector<int64_t> strides;
};

/// Interface shared by the pyramid backbones.
class PyramidBackbone : public torch::nn::Module {
 public:
  virtual FeaturePyramid extract(const torch::Tensor& images) = 0;
};

/// Small randomly initialized stand-in: five stride-2 conv/BN/ReLU stages.
class ToyPyramidImpl : public PyramidBackbone {
 public:
  explicit ToyPyramidImpl(const BackboneDescriptor& desc);
  FeaturePyramid extract(const torch::Tensor& images) override;

  torch::nn::ModuleList stages{nullptr};

 private:
  BackboneDescriptor desc_;
};
TORCH_MODULE(ToyPyramid);

/// EfficientNet-B1 feature extractor laid out like the torchvision model
/// (`features.0` stem ... `features.8` head) so pretrained weights map by
/// name. Taps: features.1 (16), .2 (24), .3 (40), .5 (112), .8 (1280).
class EfficientNetB1Impl : public PyramidBackbone {
 public:
  EfficientNetB1Impl();
  FeaturePyramid extract(const torch::Tensor& images) override;

  torch::nn::ModuleList features{nullptr};
};
TORCH_MODULE(EfficientNetB1);

std::shared_ptr<PyramidBackbone> make_backbone(const BackboneDescriptor& desc);

struct DecoderConfig {
  int64_t top_channels = 128;
  int64_t levels = kPyramidLevels;
  double leaky_slope = 0.01;

  /// Channels of decoder feature F_d at pyramid level i (1-based, i = N is
  /// the coarsest): floor(top / (N - i + 1)), at least 8.
  int64_t channels_at(int64_t level) const;
  void validate() const;
};

/// Two 3x3 conv + BatchNorm + LeakyReLU layers.
class ConvBlockImpl : public torch::nn::Module {
 public:
  ConvBlockImpl(int64_t in_channels, int64_t out_channels, double slope);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Sequential body{nullptr};
};
TORCH_MODULE(ConvBlock);

/// Upsample the coarser decoder map to the finer encoder map's size
/// (bilinear, align_corners=false), concatenate along channels, ConvBlock.
torch::Tensor decoder_step(ConvBlockImpl& block, const torch::Tensor& coarse_decoded,
                           const torch::Tensor& finer_encoded);

struct CoarseOutput {
  torch::Tensor logits;  // (B, 1, m, m)
  torch::Tensor probs;   // (B, m, m), sigmoid(logits)
};

/// Progressive decoder from a frozen pyramid to the coarse shadow mask.
class PromptDecoderImpl : public torch::nn::Module {
 public:
  PromptDecoderImpl(const DecoderConfig& cfg, const std::vector<int64_t>& encoder_channels,
                    int64_t mask_size);

  CoarseOutput forward(const FeaturePyramid& pyramid);

  torch::nn::Conv2d top{nullptr};
  /// blocks[j] produces level N-1-j from level N-j.
  torch::nn::ModuleList blocks{nullptr};
  torch::nn::Conv2d head{nullptr};

 private:
  DecoderConfig cfg_;
  int64_t mask_size_;
};
TORCH_MODULE(PromptDecoder);

/// Backbone + decoder. forward: (B, 3, S, S) -> coarse mask at mask_size.
class PromptGeneratorImpl : public torch::nn::Module {
 public:
  PromptGeneratorImpl(const BackboneDescriptor& backbone, const DecoderConfig& decoder,
                      int64_t input_size, int64_t mask_size);

  FeaturePyramid encode(const torch::Tensor& images);
  CoarseOutput forward(const torch::Tensor& images);

  int64_t input_size() const { return input_size_; }
  int64_t mask_size() const { return mask_size_; }

  std::shared_ptr<PyramidBackbone> backbone;
  PromptDecoder decoder{nullptr};

 private:
  BackboneDescriptor desc_;
  int64_t input_size_;
  int64_t mask_size_;
};
TORCH_MODULE(PromptGenerator);

}  // namespace shadeadapt
