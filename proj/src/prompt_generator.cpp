#include "shadeadapt/prompt_generator.hpp"

#include "shadeadapt/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace shadeadapt {

namespace F = torch::nn::functional;

void BackboneDescriptor::validate() const {
  if (channels.size() != kPyramidLevels || strides.size() != kPyramidLevels) {
    throw ConfigError("backbone descriptor needs exactly 5 channel and 5 stride entries");
  }
  for (size_t i = 0; i < kPyramidLevels; ++i) {
    if (channels[i] <= 0) throw ConfigError("backbone channels must be positive");
    if (strides[i] != (int64_t{2} << i)) {
      throw ConfigError("backbone strides must be 2,4,8,16,32");
    }
  }
  if (name == "efficientnet_b1") {
    if (channels != BackboneDescriptor::efficientnet_b1().channels) {
      throw ConfigError("efficientnet_b1 channels are fixed at 16,24,40,112,1280");
    }
  } else if (name != "toy") {
    throw ConfigError("unknown backbone '" + name + "' (expected efficientnet_b1 or toy)");
  }
}

BackboneDescriptor BackboneDescriptor::efficientnet_b1() { return BackboneDescriptor{}; }

BackboneDescriptor BackboneDescriptor::toy() {
  BackboneDescriptor d;
  d.name = "toy";
  d.channels = {8, 12, 16, 24, 32};
  return d;
}

ToyPyramidImpl::ToyPyramidImpl(const BackboneDescriptor& desc) : desc_(desc) {
  stages = register_module("stages", torch::nn::ModuleList());
  int64_t in = 3;
  for (int64_t out : desc_.channels) {
    stages->push_back(torch::nn::Sequential(
        torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(2).padding(1).bias(false)),
        torch::nn::BatchNorm2d(out), torch::nn::ReLU()));
    in = out;
  }
}

FeaturePyramid ToyPyramidImpl::extract(const torch::Tensor& images) {
  FeaturePyramid p;
  p.strides = desc_.strides;
  torch::Tensor x = images;
  for (const auto& stage : *stages) {
    x = stage->as<torch::nn::Sequential>()->forward(x);
    p.levels.push_back(x);
  }
  return p;
}

namespace {

torch::nn::Sequential conv_norm_act(int64_t in, int64_t out, int64_t k, int64_t stride,
                                    int64_t groups, bool activation) {
  torch::nn::Sequential s(
      torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, k)
                            .stride(stride)
                            .padding((k - 1) / 2)
                            .groups(groups)
                            .bias(false)),
      torch::nn::BatchNorm2d(out));
  if (activation) s->push_back(torch::nn::SiLU());
  return s;
}

class SqueezeExcitationImpl : public torch::nn::Module {
 public:
  SqueezeExcitationImpl(int64_t channels, int64_t squeeze) {
    fc1 = register_module("fc1", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, squeeze, 1)));
    fc2 = register_module("fc2", torch::nn::Conv2d(torch::nn::Conv2dOptions(squeeze, channels, 1)));
  }
  torch::Tensor forward(const torch::Tensor& x) {
    torch::Tensor s = F::adaptive_avg_pool2d(x, F::AdaptiveAvgPool2dFuncOptions(1));
    s = torch::sigmoid(fc2->forward(torch::silu(fc1->forward(s))));
    return x * s;
  }
  torch::nn::Conv2d fc1{nullptr};
  torch::nn::Conv2d fc2{nullptr};
};
TORCH_MODULE(SqueezeExcitation);

class MBConvImpl : public torch::nn::Module {
 public:
  MBConvImpl(int64_t expand_ratio, int64_t kernel, int64_t stride, int64_t in, int64_t out)
      : residual_(stride == 1 && in == out) {
    const int64_t expanded = in * expand_ratio;
    block = register_module("block", torch::nn::ModuleList());
    if (expanded != in) block->push_back(conv_norm_act(in, expanded, 1, 1, 1, true));
    block->push_back(conv_norm_act(expanded, expanded, kernel, stride, expanded, true));
    block->push_back(SqueezeExcitation(expanded, std::max<int64_t>(1, in / 4)));
    block->push_back(conv_norm_act(expanded, out, 1, 1, 1, false));
  }
  torch::Tensor forward(const torch::Tensor& x) {
    torch::Tensor y = x;
    for (const auto& m : *block) {
      if (auto* seq = m->as<torch::nn::Sequential>()) {
        y = seq->forward(y);
      } else {
        y = m->as<SqueezeExcitation>()->forward(y);
      }
    }
    return residual_ ? y + x : y;
  }
  torch::nn::ModuleList block{nullptr};

 private:
  bool residual_;
};
TORCH_MODULE(MBConv);

struct StageSpec {
  int64_t expand, kernel, stride, in, out, layers;
};

}  // namespace

EfficientNetB1Impl::EfficientNetB1Impl() {
  // B0 stage table with the B1 depth multiplier (1.1, rounded up) applied.
  const StageSpec stages[] = {
      {1, 3, 1, 32, 16, 2},   {6, 3, 2, 16, 24, 3},   {6, 5, 2, 24, 40, 3},
      {6, 3, 2, 40, 80, 4},   {6, 5, 1, 80, 112, 4},  {6, 5, 2, 112, 192, 5},
      {6, 3, 1, 192, 320, 2},
  };
  features = register_module("features", torch::nn::ModuleList());
  features->push_back(conv_norm_act(3, 32, 3, 2, 1, true));
  for (const auto& s : stages) {
    torch::nn::Sequential stage;
    for (int64_t i = 0; i < s.layers; ++i) {
      stage->push_back(MBConv(s.expand, s.kernel, i == 0 ? s.stride : 1, i == 0 ? s.in : s.out,
                              s.out));
    }
    features->push_back(stage);
  }
  features->push_back(conv_norm_act(320, 1280, 1, 1, 1, true));
}

FeaturePyramid EfficientNetB1Impl::extract(const torch::Tensor& images) {
  FeaturePyramid p;
  p.strides = {2, 4, 8, 16, 32};
  torch::Tensor x = images;
  for (size_t i = 0; i < features->size(); ++i) {
    x = features[i]->as<torch::nn::Sequential>()->forward(x);
    if (i == 1 || i == 2 || i == 3 || i == 5 || i == 8) p.levels.push_back(x);
  }
  return p;
}

std::shared_ptr<PyramidBackbone> make_backbone(const BackboneDescriptor& desc) {
  desc.validate();
  if (desc.name == "toy") return std::make_shared<ToyPyramidImpl>(desc);
  return std::make_shared<EfficientNetB1Impl>();
}

int64_t DecoderConfig::channels_at(int64_t level) const {
  return std::max<int64_t>(8, top_channels / (levels - level + 1));
}

void DecoderConfig::validate() const {
  if (levels != kPyramidLevels) throw ConfigError("prompt decoder expects 5 pyramid levels");
  if (top_channels < levels) {
    throw ConfigError("top_channels must be at least the number of pyramid levels");
  }
  if (!(leaky_slope >= 0.0)) throw ConfigError("leaky slope must be non-negative");
}

ConvBlockImpl::ConvBlockImpl(int64_t in_channels, int64_t out_channels, double slope) {
  auto act = torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(slope));
  body = register_module(
      "body",
      torch::nn::Sequential(
          torch::nn::Conv2d(
              torch::nn::Conv2dOptions(in_channels, out_channels, 3).padding(1).bias(false)),
          torch::nn::BatchNorm2d(out_channels), act,
          torch::nn::Conv2d(
              torch::nn::Conv2dOptions(out_channels, out_channels, 3).padding(1).bias(false)),
          torch::nn::BatchNorm2d(out_channels),
          torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(slope))));
}

torch::Tensor ConvBlockImpl::forward(const torch::Tensor& x) { return body->forward(x); }

torch::Tensor decoder_step(ConvBlockImpl& block, const torch::Tensor& coarse_decoded,
                           const torch::Tensor& finer_encoded) {
  const int64_t fh = finer_encoded.size(2), fw = finer_encoded.size(3);
  if (fh != 2 * coarse_decoded.size(2) || fw != 2 * coarse_decoded.size(3) ||
      finer_encoded.size(0) != coarse_decoded.size(0)) {
    std::ostringstream os;
    os << "decoder step: level " << coarse_decoded.sizes() << " is not one stride-2 step above "
       << finer_encoded.sizes();
    throw InternalError(os.str());
  }
  torch::Tensor up = F::interpolate(coarse_decoded, F::InterpolateFuncOptions()
                                                        .size(std::vector<int64_t>{fh, fw})
                                                        .mode(torch::kBilinear)
                                                        .align_corners(false));
  return block.forward(torch::cat({up, finer_encoded}, 1));
}

PromptDecoderImpl::PromptDecoderImpl(const DecoderConfig& cfg,
                                     const std::vector<int64_t>& encoder_channels,
                                     int64_t mask_size)
    : cfg_(cfg), mask_size_(mask_size) {
  cfg_.validate();
  const int64_t n = cfg_.levels;
  top = register_module("top", torch::nn::Conv2d(torch::nn::Conv2dOptions(
                                   encoder_channels[n - 1], cfg_.channels_at(n), 1)));
  blocks = register_module("blocks", torch::nn::ModuleList());
  for (int64_t level = n; level >= 2; --level) {
    const int64_t in = cfg_.channels_at(level) + encoder_channels[level - 2];
    blocks->push_back(ConvBlock(in, cfg_.channels_at(level - 1), cfg_.leaky_slope));
  }
  head = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(cfg_.channels_at(1), 1, 1)));
}

CoarseOutput PromptDecoderImpl::forward(const FeaturePyramid& pyramid) {
  const int64_t n = cfg_.levels;
  torch::Tensor d = top->forward(pyramid.levels[n - 1]);
  for (int64_t level = n, j = 0; level >= 2; --level, ++j) {
    d = decoder_step(*blocks[j]->as<ConvBlock>(), d, pyramid.levels[level - 2]);
  }
  torch::Tensor logits = F::interpolate(head->forward(d),
                                        F::InterpolateFuncOptions()
                                            .size(std::vector<int64_t>{mask_size_, mask_size_})
                                            .mode(torch::kBilinear)
                                            .align_corners(false));
  return {logits, torch::sigmoid(logits).squeeze(1)};
}

PromptGeneratorImpl::PromptGeneratorImpl(const BackboneDescriptor& backbone_desc,
                                         const DecoderConfig& decoder_cfg, int64_t input_size,
                                         int64_t mask_size)
    : desc_(backbone_desc), input_size_(input_size), mask_size_(mask_size) {
  if (input_size_ <= 0 || input_size_ % 32 != 0) {
    throw ConfigError("prompt generator input size must be a positive multiple of 32");
  }
  if (mask_size_ <= 0) throw ConfigError("coarse_size must be positive");
  backbone = register_module("backbone", make_backbone(desc_));
  decoder = register_module("decoder", PromptDecoder(decoder_cfg, desc_.channels, mask_size_));
}

FeaturePyramid PromptGeneratorImpl::encode(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != input_size_ ||
      images.size(3) != input_size_) {
    std::ostringstream os;
    os << "prompt generator expects (B, 3, " << input_size_ << ", " << input_size_
       << ") input, got " << images.sizes();
    throw ConfigError(os.str());
  }
  FeaturePyramid p = backbone->extract(images);
  for (size_t i = 0; i < p.levels.size(); ++i) {
    if (p.levels[i].size(1) != desc_.channels[i]) {
      throw InternalError("backbone level channel count disagrees with its descriptor");
    }
  }
  return p;
}

CoarseOutput PromptGeneratorImpl::forward(const torch::Tensor& images) {
  return decoder->forward(encode(images));
}

}  // namespace shadeadapt
