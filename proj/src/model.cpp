#include "shadeadapt/model.hpp"

#include "shadeadapt/errors.hpp"

#include <torch/serialize.h>

#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

namespace shadeadapt {

namespace F = torch::nn::functional;

std::vector<PromptKind> parse_prompt_kinds(const std::string& text) {
  std::vector<PromptKind> kinds;
  if (text == "none") return kinds;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, '+')) {
    PromptKind k;
    if (part == "point") {
      k = PromptKind::Point;
    } else if (part == "box") {
      k = PromptKind::Box;
    } else if (part == "mask") {
      k = PromptKind::Mask;
    } else {
      throw ConfigError("prompt must be none, point, box, mask or a '+' combination, got '" +
                        text + "'");
    }
    if (std::find(kinds.begin(), kinds.end(), k) != kinds.end()) {
      throw ConfigError("prompt '" + text + "' repeats a kind");
    }
    kinds.push_back(k);
  }
  if (kinds.empty()) throw ConfigError("prompt must not be empty");
  return kinds;
}

std::string prompt_kinds_name(const std::vector<PromptKind>& kinds) {
  if (kinds.empty()) return "none";
  std::string out;
  for (PromptKind k : kinds) {
    if (!out.empty()) out += '+';
    out += k == PromptKind::Point ? "point" : k == PromptKind::Box ? "box" : "mask";
  }
  return out;
}

ModelConfig ModelConfig::vit_b() {
  ModelConfig c;
  c.encoder = EncoderConfig::vit_b();
  return c;
}

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.encoder = EncoderConfig::toy();
  c.prompt_encoder.embed_dim = 32;
  c.prompt_encoder.embedding_size = 8;
  c.prompt_encoder.input_size = 64;
  c.prompt_encoder.mask_in_chans = 4;
  c.mask_decoder.transformer_dim = 32;
  c.mask_decoder.num_heads = 2;
  c.mask_decoder.mlp_dim = 64;
  c.mask_decoder.iou_head_hidden_dim = 32;
  c.backbone = BackboneDescriptor::toy();
  c.decoder.top_channels = 32;
  c.coarse_size = 32;
  c.sampling.grid_size = 8;
  return c;
}

PromptGeometry ModelConfig::geometry() const {
  return PromptGeometry{encoder.img_size, prompt_encoder.dense_size()};
}

void ModelConfig::validate() const {
  encoder.validate();
  prompt_encoder.validate();
  mask_decoder.validate();
  backbone.validate();
  decoder.validate();
  sampling.validate();
  if (prompt_encoder.embed_dim != encoder.out_chans ||
      mask_decoder.transformer_dim != encoder.out_chans) {
    throw ConfigError("prompt encoder and mask decoder width must equal the encoder output width");
  }
  if (prompt_encoder.embedding_size != encoder.grid() ||
      prompt_encoder.input_size != encoder.img_size) {
    throw ConfigError("prompt encoder grid must match the image encoder");
  }
  if (coarse_size <= 0) throw ConfigError("coarse_size must be positive");
  if (std::find(prompts.begin(), prompts.end(), PromptKind::Point) != prompts.end() &&
      sampling.strategy == SamplingStrategy::Grid && sampling.grid_size > coarse_size) {
    throw ConfigError("grid_size must not exceed coarse_size");
  }
  if (sampling.strategy == SamplingStrategy::TopK &&
      sampling.n_pos + sampling.n_neg > coarse_size * coarse_size) {
    throw ConfigError("n_pos + n_neg must not exceed the coarse mask pixel count");
  }
}

ShadowModelImpl::ShadowModelImpl(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  image_encoder = register_module("image_encoder", ImageEncoder(cfg_.encoder));
  prompt_encoder = register_module("prompt_encoder", PromptEncoder(cfg_.prompt_encoder));
  mask_decoder = register_module("mask_decoder", MaskDecoder(cfg_.mask_decoder));
  prompt_generator = register_module(
      "prompt_generator",
      PromptGenerator(cfg_.backbone, cfg_.decoder, cfg_.encoder.img_size, cfg_.coarse_size));
}

EncodedPromptInput ShadowModelImpl::encode_prompts(const PromptSet& set) const {
  EncodedPromptInput in;
  const int64_t s = cfg_.encoder.img_size;
  if (!set.points.empty()) {
    const auto n = static_cast<int64_t>(set.points.size());
    in.point_coords = torch::empty({n, 2}, torch::kFloat32);
    in.point_labels = torch::empty({n}, torch::kLong);
    auto c = in.point_coords.accessor<float, 2>();
    auto l = in.point_labels.accessor<int64_t, 1>();
    for (int64_t i = 0; i < n; ++i) {
      const PointPrompt& p = set.points[static_cast<size_t>(i)];
      c[i][0] = static_cast<float>(to_encoder_space(p.x, set.source_width, s));
      c[i][1] = static_cast<float>(to_encoder_space(p.y, set.source_height, s));
      l[i] = p.label;
    }
  }
  if (set.bbox) {
    const double sx = static_cast<double>(s) / set.source_width;
    const double sy = static_cast<double>(s) / set.source_height;
    in.box = std::array<float, 4>{static_cast<float>(set.bbox->x_min * sx),
                                  static_cast<float>(set.bbox->y_min * sy),
                                  static_cast<float>((set.bbox->x_max + 1) * sx),
                                  static_cast<float>((set.bbox->y_max + 1) * sy)};
  }
  if (set.dense_mask) {
    const ProbMap& m = *set.dense_mask;
    in.dense_mask = torch::tensor(std::vector<float>(m.values().begin(), m.values().end()))
                        .view({m.height(), m.width()});
  }
  return in;
}

ForwardOutput ShadowModelImpl::forward(const torch::Tensor& images) {
  const int64_t s = cfg_.encoder.img_size;
  if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != s || images.size(3) != s) {
    std::ostringstream os;
    os << "model expects (B, 3, " << s << ", " << s << ") input, got " << images.sizes();
    throw RequestError(os.str());
  }
  ForwardOutput out;
  const int64_t b = images.size(0);
  torch::Tensor embedding = image_encoder->forward(images);
  if (!cfg_.prompts.empty()) {
    CoarseOutput coarse = prompt_generator->forward(images);
    out.coarse_logits = coarse.logits;
    out.coarse_probs = coarse.probs;
  }
  torch::Tensor image_pe = prompt_encoder->dense_pe();
  std::vector<torch::Tensor> logits;
  for (int64_t i = 0; i < b; ++i) {
    PromptSet set;
    if (!cfg_.prompts.empty()) {
      torch::Tensor p = out.coarse_probs[i].detach().to(torch::kFloat32).contiguous();
      std::vector<float> values(p.data_ptr<float>(), p.data_ptr<float>() + p.numel());
      ProbMap map(p.size(0), p.size(1), std::move(values));
      set = assemble_prompts(map, cfg_.sampling, cfg_.prompts, cfg_.geometry());
    }
    PromptEmbeddings emb = prompt_encoder->forward(encode_prompts(set));
    MaskPrediction pred = mask_decoder->forward(embedding.narrow(0, i, 1), image_pe, emb);
    logits.push_back(pred.low_res_logits);
    out.prompts.push_back(std::move(set));
  }
  out.final_logits = F::interpolate(torch::cat(logits, 0),
                                    F::InterpolateFuncOptions()
                                        .size(std::vector<int64_t>{s, s})
                                        .mode(torch::kBilinear)
                                        .align_corners(false));
  return out;
}

std::vector<std::pair<std::string, torch::Tensor>> named_state(const torch::nn::Module& model) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& p : model.named_parameters(true)) out.emplace_back(p.key(), p.value());
  for (const auto& b : model.named_buffers(true)) out.emplace_back(b.key(), b.value());
  return out;
}

WeightLoadReport load_state_dict_file(torch::nn::Module& model, const std::filesystem::path& path,
                                      const std::string& target_prefix,
                                      const std::vector<std::string>& drop_prefixes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open weights file " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  c10::IValue value;
  try {
    value = torch::pickle_load(bytes);
  } catch (const c10::Error& e) {
    throw LoadError("cannot read weights file " + path.string() + ": " + e.what_without_backtrace());
  }
  if (!value.isGenericDict()) throw LoadError(path.string() + " does not hold a state dict");

  std::map<std::string, torch::Tensor> targets;
  for (auto& [name, t] : named_state(model)) {
    if (name.rfind(target_prefix, 0) == 0) targets.emplace(name, t);
  }
  WeightLoadReport report;
  torch::NoGradGuard guard;
  std::set<std::string> seen;
  for (const auto& item : value.toGenericDict()) {
    if (!item.key().isString() || !item.value().isTensor()) continue;
    const std::string key = item.key().toStringRef();
    bool dropped = false;
    for (const auto& d : drop_prefixes) dropped = dropped || key.rfind(d, 0) == 0;
    if (dropped) continue;
    const std::string name = target_prefix + key;
    auto it = targets.find(name);
    if (it == targets.end()) {
      report.skipped.push_back(key);
      continue;
    }
    torch::Tensor src = item.value().toTensor();
    if (!src.sizes().equals(it->second.sizes())) {
      std::ostringstream os;
      os << "shape mismatch for " << name << ": file " << src.sizes() << ", model "
         << it->second.sizes();
      throw LoadError(os.str());
    }
    it->second.copy_(src.to(it->second.dtype()));
    seen.insert(name);
    ++report.loaded;
  }
  for (const auto& [name, t] : targets) {
    if (!seen.count(name)) report.missing.push_back(name);
  }
  return report;
}

}  // namespace shadeadapt
