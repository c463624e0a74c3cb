#include "shadeadapt/image_encoder.hpp"

#include "shadeadapt/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace shadeadapt {

namespace F = torch::nn::functional;

namespace {

struct Partitioned {
  torch::Tensor windows;  // (B * nW, ws, ws, C)
  int64_t padded_h;
  int64_t padded_w;
};

Partitioned window_partition(const torch::Tensor& x, int64_t ws) {
  const int64_t b = x.size(0), h = x.size(1), w = x.size(2), c = x.size(3);
  const int64_t pad_h = (ws - h % ws) % ws;
  const int64_t pad_w = (ws - w % ws) % ws;
  torch::Tensor y = x;
  if (pad_h > 0 || pad_w > 0) {
    y = F::pad(x, F::PadFuncOptions({0, 0, 0, pad_w, 0, pad_h}));
  }
  const int64_t hp = h + pad_h, wp = w + pad_w;
  y = y.view({b, hp / ws, ws, wp / ws, ws, c})
          .permute({0, 1, 3, 2, 4, 5})
          .contiguous()
          .view({-1, ws, ws, c});
  return {y, hp, wp};
}

torch::Tensor window_unpartition(const torch::Tensor& windows, int64_t ws, int64_t hp,
                                 int64_t wp, int64_t h, int64_t w) {
  const int64_t b = windows.size(0) / (hp * wp / ws / ws);
  torch::Tensor x = windows.view({b, hp / ws, wp / ws, ws, ws, -1})
                        .permute({0, 1, 3, 2, 4, 5})
                        .contiguous()
                        .view({b, hp, wp, -1});
  if (hp > h || wp > w) {
    x = x.slice(1, 0, h).slice(2, 0, w).contiguous();
  }
  return x;
}

// Relative position table for a (q_size, k_size) query/key extent,
// resampled linearly when the stored table has a different length.
torch::Tensor get_rel_pos(int64_t q_size, int64_t k_size, const torch::Tensor& rel_pos) {
  const int64_t max_rel_dist = 2 * std::max(q_size, k_size) - 1;
  torch::Tensor table = rel_pos;
  if (rel_pos.size(0) != max_rel_dist) {
    table = F::interpolate(rel_pos.reshape({1, rel_pos.size(0), -1}).permute({0, 2, 1}),
                           F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{max_rel_dist})
                               .mode(torch::kLinear)
                               .align_corners(false))
                .reshape({-1, max_rel_dist})
                .permute({1, 0});
  }
  const double qk = std::max(static_cast<double>(k_size) / q_size, 1.0);
  const double kq = std::max(static_cast<double>(q_size) / k_size, 1.0);
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  torch::Tensor q_coords = torch::arange(q_size, opts).unsqueeze(1) * qk;
  torch::Tensor k_coords = torch::arange(k_size, opts).unsqueeze(0) * kq;
  torch::Tensor rel = (q_coords - k_coords) + (k_size - 1) * kq;
  return table.index({rel.to(torch::kLong)});
}

torch::Tensor add_decomposed_rel_pos(const torch::Tensor& attn, const torch::Tensor& q,
                                     const torch::Tensor& rel_pos_h,
                                     const torch::Tensor& rel_pos_w, int64_t h, int64_t w) {
  torch::Tensor rh = get_rel_pos(h, h, rel_pos_h);
  torch::Tensor rw = get_rel_pos(w, w, rel_pos_w);
  const int64_t b = q.size(0), dim = q.size(2);
  torch::Tensor r_q = q.reshape({b, h, w, dim});
  torch::Tensor rel_h = torch::einsum("bhwc,hkc->bhwk", {r_q, rh});
  torch::Tensor rel_w = torch::einsum("bhwc,wkc->bhwk", {r_q, rw});
  return (attn.view({b, h, w, h, w}) + rel_h.unsqueeze(4) + rel_w.unsqueeze(3))
      .view({b, h * w, h * w});
}

}  // namespace

void EncoderConfig::validate() const {
  if (img_size <= 0 || patch_size <= 0 || img_size % patch_size != 0) {
    throw ConfigError("input_size must be a positive multiple of patch_size");
  }
  if (embed_dim <= 0 || num_heads <= 0 || embed_dim % num_heads != 0) {
    throw ConfigError("embed_dim must be a positive multiple of num_heads");
  }
  if (depth <= 0) throw ConfigError("depth must be positive");
  if (out_chans <= 0) throw ConfigError("out_chans must be positive");
  if (mlp_ratio <= 0.0) throw ConfigError("mlp_ratio must be positive");
  if (window_size < 0) throw ConfigError("window_size must be non-negative");
  for (int64_t idx : global_attn_indexes) {
    if (idx < 0 || idx >= depth) {
      throw ConfigError("global_attn entries must index an encoder layer");
    }
  }
  for (double s : pixel_std) {
    if (!(s > 0.0)) throw ConfigError("pixel_std entries must be positive");
  }
  if (adapter_mha || adapter_ffn) {
    AdapterConfig{embed_dim, adapter_ratio, adapter_scale}.validate();
  }
}

EncoderConfig EncoderConfig::vit_b() { return EncoderConfig{}; }

EncoderConfig EncoderConfig::toy() {
  EncoderConfig c;
  c.img_size = 64;
  c.patch_size = 8;
  c.embed_dim = 32;
  c.depth = 2;
  c.num_heads = 2;
  c.out_chans = 32;
  c.window_size = 4;
  c.global_attn_indexes = {1};
  c.pixel_mean = {0.5, 0.5, 0.5};
  c.pixel_std = {0.5, 0.5, 0.5};
  return c;
}

LayerNorm2dImpl::LayerNorm2dImpl(int64_t channels, double eps) : eps_(eps) {
  weight = register_parameter("weight", torch::ones({channels}));
  bias = register_parameter("bias", torch::zeros({channels}));
}

torch::Tensor LayerNorm2dImpl::forward(const torch::Tensor& x) {
  torch::Tensor u = x.mean(1, true);
  torch::Tensor s = (x - u).pow(2).mean(1, true);
  torch::Tensor y = (x - u) / torch::sqrt(s + eps_);
  return weight.view({1, -1, 1, 1}) * y + bias.view({1, -1, 1, 1});
}

EncoderAttentionImpl::EncoderAttentionImpl(int64_t dim, int64_t num_heads, bool use_rel_pos,
                                           std::array<int64_t, 2> input_size)
    : num_heads_(num_heads), use_rel_pos_(use_rel_pos) {
  const int64_t head_dim = dim / num_heads;
  scale_ = 1.0 / std::sqrt(static_cast<double>(head_dim));
  qkv = register_module("qkv", torch::nn::Linear(dim, dim * 3));
  proj = register_module("proj", torch::nn::Linear(dim, dim));
  if (use_rel_pos_) {
    rel_pos_h = register_parameter("rel_pos_h", torch::zeros({2 * input_size[0] - 1, head_dim}));
    rel_pos_w = register_parameter("rel_pos_w", torch::zeros({2 * input_size[1] - 1, head_dim}));
  }
}

torch::Tensor EncoderAttentionImpl::forward(const torch::Tensor& x) {
  const int64_t b = x.size(0), h = x.size(1), w = x.size(2);
  torch::Tensor qkv_t =
      qkv->forward(x).reshape({b, h * w, 3, num_heads_, -1}).permute({2, 0, 3, 1, 4});
  auto parts = qkv_t.reshape({3, b * num_heads_, h * w, -1}).unbind(0);
  const torch::Tensor& q = parts[0];
  const torch::Tensor& k = parts[1];
  const torch::Tensor& v = parts[2];

  torch::Tensor attn = torch::matmul(q * scale_, k.transpose(-2, -1));
  if (use_rel_pos_) {
    attn = add_decomposed_rel_pos(attn, q, rel_pos_h, rel_pos_w, h, w);
  }
  attn = attn.softmax(-1);
  torch::Tensor out = torch::matmul(attn, v)
                          .view({b, num_heads_, h, w, -1})
                          .permute({0, 2, 3, 1, 4})
                          .reshape({b, h, w, -1});
  return proj->forward(out);
}

EncoderMlpImpl::EncoderMlpImpl(int64_t dim, int64_t hidden) {
  lin1 = register_module("lin1", torch::nn::Linear(dim, hidden));
  lin2 = register_module("lin2", torch::nn::Linear(hidden, dim));
}

torch::Tensor EncoderMlpImpl::forward(const torch::Tensor& x) {
  return lin2->forward(torch::gelu(lin1->forward(x)));
}

AdaptedBlockImpl::AdaptedBlockImpl(const EncoderConfig& cfg, int64_t index)
    : index_(index), adapter_scale_(cfg.adapter_scale) {
  const bool global = std::find(cfg.global_attn_indexes.begin(), cfg.global_attn_indexes.end(),
                                index) != cfg.global_attn_indexes.end();
  window_size_ = global ? 0 : cfg.window_size;
  const int64_t extent = window_size_ == 0 ? cfg.grid() : window_size_;

  norm1 = register_module(
      "norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg.embed_dim}).eps(1e-6)));
  attn = register_module("attn", EncoderAttention(cfg.embed_dim, cfg.num_heads, cfg.use_rel_pos,
                                                  std::array<int64_t, 2>{extent, extent}));
  norm2 = register_module(
      "norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg.embed_dim}).eps(1e-6)));
  mlp = register_module(
      "mlp", EncoderMlp(cfg.embed_dim, static_cast<int64_t>(cfg.embed_dim * cfg.mlp_ratio)));

  AdapterConfig acfg{cfg.embed_dim, cfg.adapter_ratio, cfg.adapter_scale};
  if (cfg.adapter_mha) adapter1 = register_module("adapter1", Adapter(acfg));
  if (cfg.adapter_ffn) adapter2 = register_module("adapter2", Adapter(acfg));
}

torch::Tensor AdaptedBlockImpl::attention_sublayer(const torch::Tensor& x) {
  torch::Tensor a = norm1->forward(x);
  if (window_size_ > 0) {
    const int64_t h = x.size(1), w = x.size(2);
    Partitioned p = window_partition(a, window_size_);
    a = window_unpartition(attn->forward(p.windows), window_size_, p.padded_h, p.padded_w, h, w);
  } else {
    a = attn->forward(a);
  }
  if (has_adapter1()) {
    a = a + adapter1->forward(a);
  }
  return x + a;
}

torch::Tensor AdaptedBlockImpl::feedforward_sublayer(const torch::Tensor& x) {
  torch::Tensor f = mlp->forward(norm2->forward(x));
  if (has_adapter2()) {
    return f + adapter_scale_ * adapter2->forward(x);
  }
  return x + f;
}

torch::Tensor AdaptedBlockImpl::forward(const torch::Tensor& x) {
  torch::Tensor y = feedforward_sublayer(attention_sublayer(x));
  if (!torch::isfinite(y).all().item<bool>()) {
    std::ostringstream os;
    os << "non-finite activations in encoder layer " << index_;
    throw NumericError(os.str());
  }
  return y;
}

TokenSequence AdaptedBlockImpl::forward(const TokenSequence& x, int64_t grid_h, int64_t grid_w) {
  if (x.tokens() != grid_h * grid_w) {
    throw RequestError("token count does not match the requested grid");
  }
  torch::Tensor map = x.data().reshape({x.batch(), grid_h, grid_w, x.channels()});
  return TokenSequence(forward(map).reshape({x.batch(), grid_h * grid_w, x.channels()}));
}

PatchEmbedImpl::PatchEmbedImpl(int64_t in_chans, int64_t embed_dim, int64_t patch_size) {
  proj = register_module(
      "proj", torch::nn::Conv2d(
                  torch::nn::Conv2dOptions(in_chans, embed_dim, patch_size).stride(patch_size)));
}

torch::Tensor PatchEmbedImpl::forward(const torch::Tensor& x) {
  return proj->forward(x).permute({0, 2, 3, 1});
}

ImageEncoderImpl::ImageEncoderImpl(const EncoderConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  patch_embed = register_module("patch_embed",
                                PatchEmbed(cfg_.in_chans, cfg_.embed_dim, cfg_.patch_size));
  pos_embed = register_parameter("pos_embed",
                                 torch::zeros({1, cfg_.grid(), cfg_.grid(), cfg_.embed_dim}));
  {
    torch::NoGradGuard no_grad;
    pos_embed.normal_(0.0, 0.02);
  }
  blocks = register_module("blocks", torch::nn::ModuleList());
  for (int64_t i = 0; i < cfg_.depth; ++i) {
    blocks->push_back(AdaptedBlock(cfg_, i));
  }
  neck = register_module(
      "neck",
      torch::nn::Sequential(
          torch::nn::Conv2d(
              torch::nn::Conv2dOptions(cfg_.embed_dim, cfg_.out_chans, 1).bias(false)),
          LayerNorm2d(cfg_.out_chans),
          torch::nn::Conv2d(
              torch::nn::Conv2dOptions(cfg_.out_chans, cfg_.out_chans, 3).padding(1).bias(false)),
          LayerNorm2d(cfg_.out_chans)));
}

torch::Tensor ImageEncoderImpl::forward(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != cfg_.in_chans || images.size(2) != cfg_.img_size ||
      images.size(3) != cfg_.img_size) {
    std::ostringstream os;
    os << "image encoder expects (B, " << cfg_.in_chans << ", " << cfg_.img_size << ", "
       << cfg_.img_size << ") input, got " << images.sizes();
    throw ConfigError(os.str());
  }
  torch::Tensor x = patch_embed->forward(images) + pos_embed;
  for (const auto& block : *blocks) {
    x = block->as<AdaptedBlock>()->forward(x);
  }
  return neck->forward(x.permute({0, 3, 1, 2}));
}

}  // namespace shadeadapt
