#include "shadeadapt/sam.hpp"

#include "shadeadapt/errors.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace shadeadapt {

void PromptEncoderConfig::validate() const {
  if (embed_dim <= 0 || embed_dim % 2 != 0) {
    throw ConfigError("prompt embed_dim must be a positive even number");
  }
  if (embedding_size <= 0 || input_size <= 0) {
    throw ConfigError("prompt encoder grid sizes must be positive");
  }
  if (mask_in_chans < 4 || mask_in_chans % 4 != 0) {
    throw ConfigError("mask_in_chans must be a positive multiple of 4");
  }
}

void MaskDecoderConfig::validate() const {
  if (transformer_dim <= 0 || transformer_dim % 8 != 0) {
    throw ConfigError("decoder_dim must be a positive multiple of 8");
  }
  if (num_heads <= 0 || (transformer_dim / attention_downsample_rate) % num_heads != 0) {
    throw ConfigError("decoder_heads must divide decoder_dim / attention_downsample_rate");
  }
  if (depth <= 0 || mlp_dim <= 0 || iou_head_depth <= 0 || iou_head_hidden_dim <= 0) {
    throw ConfigError("mask decoder sizes must be positive");
  }
  if (num_multimask_outputs < 0) {
    throw ConfigError("multimask_outputs must be non-negative");
  }
}

PositionEmbeddingRandomImpl::PositionEmbeddingRandomImpl(int64_t num_pos_feats, double scale) {
  positional_encoding_gaussian_matrix = register_buffer(
      "positional_encoding_gaussian_matrix", scale * torch::randn({2, num_pos_feats}));
}

torch::Tensor PositionEmbeddingRandomImpl::encode(const torch::Tensor& unit_coords) {
  torch::Tensor c = 2.0 * unit_coords - 1.0;
  c = torch::matmul(c, positional_encoding_gaussian_matrix);
  c = 2.0 * std::numbers::pi * c;
  return torch::cat({torch::sin(c), torch::cos(c)}, -1);
}

torch::Tensor PositionEmbeddingRandomImpl::forward(int64_t h, int64_t w) {
  auto opts = positional_encoding_gaussian_matrix.options();
  torch::Tensor y = (torch::arange(h, opts) + 0.5) / static_cast<double>(h);
  torch::Tensor x = (torch::arange(w, opts) + 0.5) / static_cast<double>(w);
  auto grids = torch::meshgrid({y, x}, "ij");
  torch::Tensor pe = encode(torch::stack({grids[1], grids[0]}, -1));
  return pe.permute({2, 0, 1});
}

torch::Tensor PositionEmbeddingRandomImpl::forward_with_coords(const torch::Tensor& coords,
                                                               int64_t image_h, int64_t image_w) {
  torch::Tensor c = coords.clone();
  c.select(-1, 0).div_(static_cast<double>(image_w));
  c.select(-1, 1).div_(static_cast<double>(image_h));
  return encode(c);
}

PromptEncoderImpl::PromptEncoderImpl(const PromptEncoderConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int64_t d = cfg_.embed_dim;
  pe_layer = register_module("pe_layer", PositionEmbeddingRandom(d / 2));
  point_embeddings = register_module("point_embeddings", torch::nn::ModuleList());
  for (int i = 0; i < 4; ++i) {
    point_embeddings->push_back(torch::nn::Embedding(1, d));
  }
  not_a_point_embed = register_module("not_a_point_embed", torch::nn::Embedding(1, d));
  const int64_t mic = cfg_.mask_in_chans;
  mask_downscaling = register_module(
      "mask_downscaling",
      torch::nn::Sequential(
          torch::nn::Conv2d(torch::nn::Conv2dOptions(1, mic / 4, 2).stride(2)),
          LayerNorm2d(mic / 4), torch::nn::GELU(),
          torch::nn::Conv2d(torch::nn::Conv2dOptions(mic / 4, mic, 2).stride(2)),
          LayerNorm2d(mic), torch::nn::GELU(),
          torch::nn::Conv2d(torch::nn::Conv2dOptions(mic, d, 1))));
  no_mask_embed = register_module("no_mask_embed", torch::nn::Embedding(1, d));
}

torch::Tensor PromptEncoderImpl::point_embedding(int64_t slot) {
  return point_embeddings[slot]->as<torch::nn::Embedding>()->weight;  // (1, D)
}

torch::Tensor PromptEncoderImpl::dense_pe() {
  return pe_layer->forward(cfg_.embedding_size, cfg_.embedding_size).unsqueeze(0);
}

PromptEmbeddings PromptEncoderImpl::forward(const EncodedPromptInput& prompts) {
  const int64_t d = cfg_.embed_dim;
  const int64_t s = cfg_.input_size;
  std::vector<torch::Tensor> sparse;

  if (prompts.point_coords.defined() && prompts.point_coords.size(0) > 0) {
    torch::Tensor coords = prompts.point_coords.to(torch::kFloat32);
    torch::Tensor labels = prompts.point_labels.to(torch::kLong);
    if (coords.dim() != 2 || coords.size(1) != 2 || labels.size(0) != coords.size(0)) {
      throw RequestError("point prompts must be (N, 2) coordinates with N labels");
    }
    if (!prompts.box) {
      // Pad with a not-a-point token, as the decoder was trained with.
      coords = torch::cat({coords, torch::zeros({1, 2})}, 0);
      labels = torch::cat({labels, torch::full({1}, -1, torch::kLong)}, 0);
    }
    torch::Tensor emb = pe_layer->forward_with_coords(coords, s, s);
    torch::Tensor lab = labels.unsqueeze(1);
    emb = torch::where(lab == -1, torch::zeros_like(emb), emb);
    emb = emb + (lab == -1).to(emb.dtype()) * not_a_point_embed->weight;
    emb = emb + (lab == 0).to(emb.dtype()) * point_embedding(0);
    emb = emb + (lab == 1).to(emb.dtype()) * point_embedding(1);
    sparse.push_back(emb);
  }
  if (prompts.box) {
    const auto& b = *prompts.box;
    torch::Tensor corners = torch::tensor({b[0], b[1], b[2], b[3]}).view({2, 2});
    torch::Tensor emb = pe_layer->forward_with_coords(corners, s, s);
    emb = emb + torch::cat({point_embedding(2), point_embedding(3)}, 0);
    sparse.push_back(emb);
  }

  PromptEmbeddings out;
  out.sparse = sparse.empty() ? torch::zeros({1, 0, d}) : torch::cat(sparse, 0).unsqueeze(0);
  const int64_t h = cfg_.embedding_size;
  if (prompts.dense_mask.defined()) {
    torch::Tensor m = prompts.dense_mask.to(torch::kFloat32);
    if (m.dim() != 2 || m.size(0) != cfg_.dense_size() || m.size(1) != cfg_.dense_size()) {
      std::ostringstream os;
      os << "dense mask prompt must be " << cfg_.dense_size() << "x" << cfg_.dense_size();
      throw RequestError(os.str());
    }
    out.dense = mask_downscaling->forward(m.view({1, 1, m.size(0), m.size(1)}));
  } else {
    out.dense = no_mask_embed->weight.view({1, d, 1, 1}).expand({1, d, h, h});
  }
  return out;
}

TokenAttentionImpl::TokenAttentionImpl(int64_t dim, int64_t num_heads, int64_t downsample_rate)
    : num_heads_(num_heads) {
  const int64_t internal = dim / downsample_rate;
  q_proj = register_module("q_proj", torch::nn::Linear(dim, internal));
  k_proj = register_module("k_proj", torch::nn::Linear(dim, internal));
  v_proj = register_module("v_proj", torch::nn::Linear(dim, internal));
  out_proj = register_module("out_proj", torch::nn::Linear(internal, dim));
}

torch::Tensor TokenAttentionImpl::forward(const torch::Tensor& q_in, const torch::Tensor& k_in,
                                          const torch::Tensor& v_in) {
  auto split = [this](const torch::Tensor& x) {
    const int64_t b = x.size(0), n = x.size(1), c = x.size(2);
    return x.reshape({b, n, num_heads_, c / num_heads_}).transpose(1, 2);
  };
  torch::Tensor q = split(q_proj->forward(q_in));
  torch::Tensor k = split(k_proj->forward(k_in));
  torch::Tensor v = split(v_proj->forward(v_in));
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.size(3)));
  torch::Tensor attn = torch::softmax(torch::matmul(q, k.transpose(2, 3)) * scale, -1);
  torch::Tensor out = torch::matmul(attn, v).transpose(1, 2);
  out = out.reshape({out.size(0), out.size(1), -1});
  return out_proj->forward(out);
}

MlpStackImpl::MlpStackImpl(int64_t input_dim, int64_t hidden_dim, int64_t output_dim,
                           int64_t num_layers) {
  layers = register_module("layers", torch::nn::ModuleList());
  for (int64_t i = 0; i < num_layers; ++i) {
    const int64_t in = i == 0 ? input_dim : hidden_dim;
    const int64_t out = i == num_layers - 1 ? output_dim : hidden_dim;
    layers->push_back(torch::nn::Linear(in, out));
  }
}

torch::Tensor MlpStackImpl::forward(torch::Tensor x) {
  const size_t n = layers->size();
  for (size_t i = 0; i < n; ++i) {
    x = layers[i]->as<torch::nn::Linear>()->forward(x);
    if (i + 1 < n) x = torch::relu(x);
  }
  return x;
}

ReluMlpImpl::ReluMlpImpl(int64_t dim, int64_t hidden) {
  lin1 = register_module("lin1", torch::nn::Linear(dim, hidden));
  lin2 = register_module("lin2", torch::nn::Linear(hidden, dim));
}

torch::Tensor ReluMlpImpl::forward(const torch::Tensor& x) {
  return lin2->forward(torch::relu(lin1->forward(x)));
}

TwoWayBlockImpl::TwoWayBlockImpl(int64_t dim, int64_t num_heads, int64_t mlp_dim,
                                 int64_t downsample_rate, bool skip_first_layer_pe)
    : skip_first_layer_pe_(skip_first_layer_pe) {
  auto ln = [dim] { return torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})); };
  self_attn = register_module("self_attn", TokenAttention(dim, num_heads));
  norm1 = register_module("norm1", ln());
  cross_attn_token_to_image = register_module("cross_attn_token_to_image",
                                              TokenAttention(dim, num_heads, downsample_rate));
  norm2 = register_module("norm2", ln());
  mlp = register_module("mlp", ReluMlp(dim, mlp_dim));
  norm3 = register_module("norm3", ln());
  norm4 = register_module("norm4", ln());
  cross_attn_image_to_token = register_module("cross_attn_image_to_token",
                                              TokenAttention(dim, num_heads, downsample_rate));
}

std::pair<torch::Tensor, torch::Tensor> TwoWayBlockImpl::forward(torch::Tensor queries,
                                                                 torch::Tensor keys,
                                                                 const torch::Tensor& query_pe,
                                                                 const torch::Tensor& key_pe) {
  if (skip_first_layer_pe_) {
    queries = self_attn->forward(queries, queries, queries);
  } else {
    torch::Tensor q = queries + query_pe;
    queries = queries + self_attn->forward(q, q, queries);
  }
  queries = norm1->forward(queries);

  torch::Tensor q = queries + query_pe;
  torch::Tensor k = keys + key_pe;
  queries = norm2->forward(queries + cross_attn_token_to_image->forward(q, k, keys));

  queries = norm3->forward(queries + mlp->forward(queries));

  q = queries + query_pe;
  k = keys + key_pe;
  keys = norm4->forward(keys + cross_attn_image_to_token->forward(k, q, queries));
  return {queries, keys};
}

TwoWayTransformerImpl::TwoWayTransformerImpl(const MaskDecoderConfig& cfg) {
  layers = register_module("layers", torch::nn::ModuleList());
  for (int64_t i = 0; i < cfg.depth; ++i) {
    layers->push_back(TwoWayBlock(cfg.transformer_dim, cfg.num_heads, cfg.mlp_dim,
                                  cfg.attention_downsample_rate, i == 0));
  }
  final_attn_token_to_image = register_module(
      "final_attn_token_to_image",
      TokenAttention(cfg.transformer_dim, cfg.num_heads, cfg.attention_downsample_rate));
  norm_final_attn = register_module(
      "norm_final_attn", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg.transformer_dim})));
}

std::pair<torch::Tensor, torch::Tensor> TwoWayTransformerImpl::forward(
    const torch::Tensor& image_embedding, const torch::Tensor& image_pe,
    const torch::Tensor& point_embedding) {
  torch::Tensor keys = image_embedding.flatten(2).permute({0, 2, 1});
  torch::Tensor key_pe = image_pe.flatten(2).permute({0, 2, 1});
  torch::Tensor queries = point_embedding;
  for (const auto& layer : *layers) {
    std::tie(queries, keys) =
        layer->as<TwoWayBlock>()->forward(queries, keys, point_embedding, key_pe);
  }
  torch::Tensor q = queries + point_embedding;
  torch::Tensor k = keys + key_pe;
  queries = norm_final_attn->forward(queries + final_attn_token_to_image->forward(q, k, keys));
  return {queries, keys};
}

MaskDecoderImpl::MaskDecoderImpl(const MaskDecoderConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int64_t d = cfg_.transformer_dim;
  const int64_t num_mask_tokens = cfg_.num_multimask_outputs + 1;
  transformer = register_module("transformer", TwoWayTransformer(cfg_));
  iou_token = register_module("iou_token", torch::nn::Embedding(1, d));
  mask_tokens = register_module("mask_tokens", torch::nn::Embedding(num_mask_tokens, d));
  output_upscaling = register_module(
      "output_upscaling",
      torch::nn::Sequential(
          torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(d, d / 4, 2).stride(2)),
          LayerNorm2d(d / 4), torch::nn::GELU(),
          torch::nn::ConvTranspose2d(
              torch::nn::ConvTranspose2dOptions(d / 4, d / 8, 2).stride(2)),
          torch::nn::GELU()));
  output_hypernetworks_mlps = register_module("output_hypernetworks_mlps", torch::nn::ModuleList());
  for (int64_t i = 0; i < num_mask_tokens; ++i) {
    output_hypernetworks_mlps->push_back(MlpStack(d, d, d / 8, 3));
  }
  iou_prediction_head = register_module(
      "iou_prediction_head",
      MlpStack(d, cfg_.iou_head_hidden_dim, num_mask_tokens, cfg_.iou_head_depth));
}

MaskPrediction MaskDecoderImpl::forward(const torch::Tensor& image_embedding,
                                        const torch::Tensor& image_pe,
                                        const PromptEmbeddings& prompts) {
  torch::Tensor output_tokens = torch::cat({iou_token->weight, mask_tokens->weight}, 0).unsqueeze(0);
  torch::Tensor tokens = torch::cat({output_tokens, prompts.sparse}, 1);

  torch::Tensor src = image_embedding + prompts.dense;
  const int64_t b = src.size(0), c = src.size(1), h = src.size(2), w = src.size(3);
  auto [hs, keys] = transformer->forward(src, image_pe, tokens);

  torch::Tensor iou_token_out = hs.select(1, 0);
  torch::Tensor upscaled = output_upscaling->forward(keys.transpose(1, 2).reshape({b, c, h, w}));

  // Single-mask output: only the first mask token's hypernetwork is used.
  // The multimask heads stay in the module so checkpoints map one-to-one.
  torch::Tensor hyper_in =
      output_hypernetworks_mlps[0]->as<MlpStack>()->forward(hs.select(1, 1)).unsqueeze(1);
  const int64_t uc = upscaled.size(1), uh = upscaled.size(2), uw = upscaled.size(3);
  torch::Tensor masks = torch::matmul(hyper_in, upscaled.view({b, uc, uh * uw})).view({b, 1, uh, uw});

  MaskPrediction out;
  out.low_res_logits = masks;
  out.iou = iou_prediction_head->forward(iou_token_out).slice(1, 0, 1);
  return out;
}

}  // namespace shadeadapt
