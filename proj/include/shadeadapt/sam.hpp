#pragma once

// Prompt encoder and mask decoder of the promptable segmentation model.
// Layouts and parameter names follow the published checkpoint.

#include "shadeadapt/image_encoder.hpp"

#include <torch/torch.h>

#include <array>
#include <optional>

namespace shadeadapt {

struct PromptEncoderConfig {
  int64_t embed_dim = 256;
  int64_t embedding_size = 64;   // image embedding grid (per side)
  int64_t input_size = 1024;     // encoder input (per side)
  int64_t mask_in_chans = 16;

  /// Side of the dense-mask prompt grid: four times the embedding grid.
  int64_t dense_size() const { return embedding_size * 4; }
  void validate() const;
};

struct MaskDecoderConfig {
  int64_t transformer_dim = 256;
  int64_t depth = 2;
  int64_t num_heads = 8;
  int64_t mlp_dim = 2048;
  int64_t attention_downsample_rate = 2;
  int64_t num_multimask_outputs = 3;
  int64_t iou_head_depth = 3;
  int64_t iou_head_hidden_dim = 256;

  void validate() const;
};

class PositionEmbeddingRandomImpl : public torch::nn::Module {
 public:
  explicit PositionEmbeddingRandomImpl(int64_t num_pos_feats, double scale = 1.0);

  /// Dense encoding over an (h, w) grid: (2F, h, w).
  torch::Tensor forward(int64_t h, int64_t w);
  /// Encodes pixel coordinates (..., 2) given as (x, y) in an image of the
  /// given size. Coordinates are used as passed, no half-pixel shift.
  torch::Tensor forward_with_coords(const torch::Tensor& coords, int64_t image_h,
                                    int64_t image_w);

  torch::Tensor positional_encoding_gaussian_matrix;

 private:
  torch::Tensor encode(const torch::Tensor& unit_coords);
};
TORCH_MODULE(PositionEmbeddingRandom);

/// Prompts for one image, already in encoder-input pixel coordinates.
struct EncodedPromptInput {
  torch::Tensor point_coords;  // (N, 2) float, may be undefined
  torch::Tensor point_labels;  // (N) long, 1 = positive, 0 = negative
  std::optional<std::array<float, 4>> box;  // x0, y0, x1, y1
  torch::Tensor dense_mask;    // (dense, dense) float, may be undefined
};

struct PromptEmbeddings {
  torch::Tensor sparse;  // (1, n, D)
  torch::Tensor dense;   // (1, D, h, w)
};

class PromptEncoderImpl : public torch::nn::Module {
 public:
  explicit PromptEncoderImpl(const PromptEncoderConfig& cfg);

  PromptEmbeddings forward(const EncodedPromptInput& prompts);
  /// (1, D, h, w) positional encoding of the image embedding grid.
  torch::Tensor dense_pe();

  const PromptEncoderConfig& config() const { return cfg_; }

  PositionEmbeddingRandom pe_layer{nullptr};
  torch::nn::ModuleList point_embeddings{nullptr};  // neg, pos, box corner 0, box corner 1
  torch::nn::Embedding not_a_point_embed{nullptr};
  torch::nn::Sequential mask_downscaling{nullptr};
  torch::nn::Embedding no_mask_embed{nullptr};

 private:
  torch::Tensor point_embedding(int64_t slot);
  PromptEncoderConfig cfg_;
};
TORCH_MODULE(PromptEncoder);

/// Attention with an optional downscaled internal width.
class TokenAttentionImpl : public torch::nn::Module {
 public:
  TokenAttentionImpl(int64_t dim, int64_t num_heads, int64_t downsample_rate = 1);
  torch::Tensor forward(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v);

  torch::nn::Linear q_proj{nullptr};
  torch::nn::Linear k_proj{nullptr};
  torch::nn::Linear v_proj{nullptr};
  torch::nn::Linear out_proj{nullptr};

 private:
  int64_t num_heads_;
};
TORCH_MODULE(TokenAttention);

/// Stack of Linear layers with ReLU between them.
class MlpStackImpl : public torch::nn::Module {
 public:
  MlpStackImpl(int64_t input_dim, int64_t hidden_dim, int64_t output_dim, int64_t num_layers);
  torch::Tensor forward(torch::Tensor x);

  torch::nn::ModuleList layers{nullptr};
};
TORCH_MODULE(MlpStack);

/// lin2(ReLU(lin1(x))).
class ReluMlpImpl : public torch::nn::Module {
 public:
  ReluMlpImpl(int64_t dim, int64_t hidden);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Linear lin1{nullptr};
  torch::nn::Linear lin2{nullptr};
};
TORCH_MODULE(ReluMlp);

class TwoWayBlockImpl : public torch::nn::Module {
 public:
  TwoWayBlockImpl(int64_t dim, int64_t num_heads, int64_t mlp_dim, int64_t downsample_rate,
                  bool skip_first_layer_pe);

  std::pair<torch::Tensor, torch::Tensor> forward(torch::Tensor queries, torch::Tensor keys,
                                                  const torch::Tensor& query_pe,
                                                  const torch::Tensor& key_pe);

  TokenAttention self_attn{nullptr};
  torch::nn::LayerNorm norm1{nullptr};
  TokenAttention cross_attn_token_to_image{nullptr};
  torch::nn::LayerNorm norm2{nullptr};
  ReluMlp mlp{nullptr};
  torch::nn::LayerNorm norm3{nullptr};
  torch::nn::LayerNorm norm4{nullptr};
  TokenAttention cross_attn_image_to_token{nullptr};

 private:
  bool skip_first_layer_pe_;
};
TORCH_MODULE(TwoWayBlock);

class TwoWayTransformerImpl : public torch::nn::Module {
 public:
  explicit TwoWayTransformerImpl(const MaskDecoderConfig& cfg);

  /// Returns (tokens, image keys).
  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& image_embedding,
                                                  const torch::Tensor& image_pe,
                                                  const torch::Tensor& point_embedding);

  torch::nn::ModuleList layers{nullptr};
  TokenAttention final_attn_token_to_image{nullptr};
  torch::nn::LayerNorm norm_final_attn{nullptr};
};
TORCH_MODULE(TwoWayTransformer);

struct MaskPrediction {
  torch::Tensor low_res_logits;  // (1, 1, 4h, 4w), single-mask output
  torch::Tensor iou;             // (1, 1)
};

class MaskDecoderImpl : public torch::nn::Module {
 public:
  explicit MaskDecoderImpl(const MaskDecoderConfig& cfg);

  /// Single-mask output for one image: embedding (1, D, h, w).
  MaskPrediction forward(const torch::Tensor& image_embedding, const torch::Tensor& image_pe,
                         const PromptEmbeddings& prompts);

  TwoWayTransformer transformer{nullptr};
  torch::nn::Embedding iou_token{nullptr};
  torch::nn::Embedding mask_tokens{nullptr};
  torch::nn::Sequential output_upscaling{nullptr};
  torch::nn::ModuleList output_hypernetworks_mlps{nullptr};
  MlpStack iou_prediction_head{nullptr};

 private:
  MaskDecoderConfig cfg_;
};
TORCH_MODULE(MaskDecoder);

}  // namespace shadeadapt
