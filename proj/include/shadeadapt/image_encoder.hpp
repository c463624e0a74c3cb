#pragma once

#include "shadeadapt/adapter.hpp"

#include <torch/torch.h>

#include <array>
#include <vector>

namespace shadeadapt {

/// Architecture of the ViT image encoder. Module and parameter names mirror
/// the published foundation checkpoint so its state dict maps directly.
struct EncoderConfig {
  int64_t img_size = 1024;
  int64_t patch_size = 16;
  int64_t in_chans = 3;
  int64_t embed_dim = 768;
  int64_t depth = 12;
  int64_t num_heads = 12;
  double mlp_ratio = 4.0;
  int64_t out_chans = 256;
  int64_t window_size = 14;
  std::vector<int64_t> global_attn_indexes{2, 5, 8, 11};
  bool use_rel_pos = true;

  bool adapter_mha = true;
  bool adapter_ffn = true;
  double adapter_ratio = 0.25;
  double adapter_scale = 1.0;

  std::array<double, 3> pixel_mean{123.675 / 255.0, 116.28 / 255.0, 103.53 / 255.0};
  std::array<double, 3> pixel_std{58.395 / 255.0, 57.12 / 255.0, 57.375 / 255.0};

  int64_t grid() const { return img_size / patch_size; }
  void validate() const;

  /// ViT-B configuration of the foundation encoder.
  static EncoderConfig vit_b();
  /// Small encoder for CPU tests: 64px input, 8x8 token grid, width 32.
  static EncoderConfig toy();
};

/// LayerNorm over the channel axis of an NCHW tensor.
class LayerNorm2dImpl : public torch::nn::Module {
 public:
  explicit LayerNorm2dImpl(int64_t channels, double eps = 1e-6);
  torch::Tensor forward(const torch::Tensor& x);

  torch::Tensor weight;
  torch::Tensor bias;

 private:
  double eps_;
};
TORCH_MODULE(LayerNorm2d);

/// Multi-head self-attention on (B, H, W, C) token maps with optional
/// decomposed relative position terms.
class EncoderAttentionImpl : public torch::nn::Module {
 public:
  EncoderAttentionImpl(int64_t dim, int64_t num_heads, bool use_rel_pos,
                       std::array<int64_t, 2> input_size);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Linear qkv{nullptr};
  torch::nn::Linear proj{nullptr};
  torch::Tensor rel_pos_h;
  torch::Tensor rel_pos_w;

 private:
  int64_t num_heads_;
  double scale_;
  bool use_rel_pos_;
};
TORCH_MODULE(EncoderAttention);

class EncoderMlpImpl : public torch::nn::Module {
 public:
  EncoderMlpImpl(int64_t dim, int64_t hidden);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Linear lin1{nullptr};
  torch::nn::Linear lin2{nullptr};
};
TORCH_MODULE(EncoderMlp);

/// Pre-norm transformer layer with the two adapters.
///
///   a   = Attn(LN1(x))            (windowed when window_size > 0)
///   a  += adapter1(a)             (serial, before the residual add)
///   x   = x + a
///   out = MLP(LN2(x)) + scale * adapter2(x)
///
/// adapter2 takes the place of the feed-forward identity shortcut. With an
/// adapter disabled the layer reduces to the plain pre-norm block.
class AdaptedBlockImpl : public torch::nn::Module {
 public:
  AdaptedBlockImpl(const EncoderConfig& cfg, int64_t index);

  /// x: (B, H, W, C).
  torch::Tensor forward(const torch::Tensor& x);
  /// Token sequence over an h x w grid, N = h * w.
  TokenSequence forward(const TokenSequence& x, int64_t grid_h, int64_t grid_w);

  torch::Tensor attention_sublayer(const torch::Tensor& x);
  torch::Tensor feedforward_sublayer(const torch::Tensor& x);

  int64_t index() const { return index_; }
  bool has_adapter1() const { return !adapter1.is_empty(); }
  bool has_adapter2() const { return !adapter2.is_empty(); }

  torch::nn::LayerNorm norm1{nullptr};
  EncoderAttention attn{nullptr};
  torch::nn::LayerNorm norm2{nullptr};
  EncoderMlp mlp{nullptr};
  Adapter adapter1{nullptr};
  Adapter adapter2{nullptr};

 private:
  int64_t index_;
  int64_t window_size_;
  double adapter_scale_;
};
TORCH_MODULE(AdaptedBlock);

class PatchEmbedImpl : public torch::nn::Module {
 public:
  PatchEmbedImpl(int64_t in_chans, int64_t embed_dim, int64_t patch_size);
  /// (B, C, H, W) -> (B, H/p, W/p, embed_dim)
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d proj{nullptr};
};
TORCH_MODULE(PatchEmbed);

/// Frozen ViT image encoder with adapters inserted into every layer.
/// forward: (B, 3, S, S) normalized image -> (B, out_chans, S/p, S/p).
class ImageEncoderImpl : public torch::nn::Module {
 public:
  explicit ImageEncoderImpl(const EncoderConfig& cfg);

  torch::Tensor forward(const torch::Tensor& images);

  const EncoderConfig& config() const { return cfg_; }

  PatchEmbed patch_embed{nullptr};
  torch::Tensor pos_embed;
  torch::nn::ModuleList blocks{nullptr};
  torch::nn::Sequential neck{nullptr};

 private:
  EncoderConfig cfg_;
};
TORCH_MODULE(ImageEncoder);

}  // namespace shadeadapt
