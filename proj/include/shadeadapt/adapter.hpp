#pragma once

#include <torch/torch.h>

#include <cstdint>

namespace shadeadapt {

/// Batched token embeddings (B, N, C). Construction checks rank and
/// finiteness; the channel width is checked by whoever consumes it.
class TokenSequence {
 public:
  explicit TokenSequence(torch::Tensor data);

  const torch::Tensor& data() const { return data_; }
  int64_t batch() const { return data_.size(0); }
  int64_t tokens() const { return data_.size(1); }
  int64_t channels() const { return data_.size(2); }

 private:
  torch::Tensor data_;
};

struct AdapterConfig {
  int64_t channels = 0;
  double ratio = 0.25;
  /// Multiplier on the adapter output; only the feed-forward adapter uses it.
  double scale = 1.0;
  /// Std of the normal init for both projections. Biases start at zero.
  double init_std = 0.02;

  /// Bottleneck width, floor(ratio * channels).
  int64_t hidden() const;
  /// Throws ConfigError unless 0 < ratio < 1, channels > 0 and hidden() >= 1.
  void validate() const;
};

/// Bottleneck adapter: up(GELU(down(x))). Acts on the last dimension, so
/// it accepts (B, N, C) token sequences and (B, H, W, C) token maps alike.
class AdapterImpl : public torch::nn::Module {
 public:
  explicit AdapterImpl(const AdapterConfig& cfg);

  torch::Tensor forward(const torch::Tensor& x);
  TokenSequence forward(const TokenSequence& x);

  const AdapterConfig& config() const { return cfg_; }

  torch::nn::Linear down{nullptr};
  torch::nn::Linear up{nullptr};

 private:
  AdapterConfig cfg_;
};
TORCH_MODULE(Adapter);

}  // namespace shadeadapt
