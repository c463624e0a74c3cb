#include "shadeadapt/trainer.hpp"

#include "shadeadapt/errors.hpp"

#include <torch/serialize.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace shadeadapt {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;

namespace {

constexpr const char* kCheckpointFormat = "shadeadapt-checkpoint";

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

uint64_t mix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t derive_seed(uint64_t seed, uint64_t a, uint64_t b) { return mix(mix(mix(seed) ^ a) ^ b); }

torch::Tensor nearest_resize_batch(const torch::Tensor& masks, int64_t size) {
  return resize_mask_nearest(masks, size, size);
}

BerReport ber_of(const torch::Tensor& pred01, const torch::Tensor& gt01) {
  torch::Tensor p = pred01.to(torch::kUInt8).contiguous();
  torch::Tensor g = gt01.to(torch::kUInt8).contiguous();
  return ber_compute(std::span<const uint8_t>(p.data_ptr<uint8_t>(), p.numel()),
                     std::span<const uint8_t>(g.data_ptr<uint8_t>(), g.numel()));
}

std::string history_to_text(const std::vector<EpochRecord>& h) {
  std::string out;
  for (const auto& r : h) {
    out += std::to_string(r.epoch) + "," + fmt(r.train_ber) + "," +
           (r.eval_ber ? fmt(*r.eval_ber) : std::string()) + "\n";
  }
  return out;
}

std::vector<EpochRecord> history_from_text(const std::string& text) {
  std::vector<EpochRecord> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() < 2) throw LoadError("malformed checkpoint history line '" + line + "'");
    EpochRecord r;
    r.epoch = std::stoll(f[0]);
    r.train_ber = std::stod(f[1]);
    if (f.size() > 2 && !f[2].empty()) r.eval_ber = std::stod(f[2]);
    out.push_back(r);
  }
  return out;
}

std::vector<char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

Pipeline build_pipeline(const RunConfig& cfg) {
  cfg.validate();
  torch::manual_seed(cfg.base_seed);
  Pipeline p;
  p.cfg = cfg;
  p.model = ShadowModel(cfg.model);
  if (!cfg.base_checkpoint.empty()) {
    WeightLoadReport r = load_state_dict_file(*p.model, cfg.base_checkpoint, "");
    if (r.loaded == 0) {
      throw LoadError("no tensor in " + cfg.base_checkpoint.string() + " matches the model");
    }
  }
  if (!cfg.backbone_checkpoint.empty()) {
    WeightLoadReport r = load_state_dict_file(*p.model, cfg.backbone_checkpoint,
                                              "prompt_generator.backbone.", {"classifier."});
    if (!r.missing.empty()) {
      throw LoadError("backbone weights lack " + std::to_string(r.missing.size()) +
                      " entries, first: " + r.missing.front());
    }
  }
  p.policy = policy_from_flags(*p.model, cfg.train.freeze);
  apply_freeze_policy(*p.model, p.policy);
  return p;
}

// ---------------------------------------------------------------------------

void save_checkpoint(const fs::path& path, const Pipeline& pipeline, int64_t epoch,
                     const std::vector<EpochRecord>& history) {
  const auto groups = parameter_groups(*pipeline.model);
  c10::Dict<std::string, torch::Tensor> tensors;
  for (const auto& [name, t] : named_state(*pipeline.model)) {
    if (pipeline.policy.is_trainable(group_of(name, groups))) {
      tensors.insert(name, t.detach().clone());
    }
  }
  c10::impl::GenericDict root(c10::StringType::get(), c10::AnyType::get());
  root.insert(std::string("format"), c10::IValue(std::string(kCheckpointFormat)));
  root.insert(std::string("version"), c10::IValue(kCheckpointVersion));
  root.insert(std::string("config"), c10::IValue(config_to_text(pipeline.cfg)));
  root.insert(std::string("epoch"), c10::IValue(epoch));
  root.insert(std::string("history"), c10::IValue(history_to_text(history)));
  root.insert(std::string("tensors"), c10::IValue(tensors));
  std::vector<char> bytes = torch::pickle_save(c10::IValue(root));
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const fs::path& path, const RunConfig* expected) {
  if (!fs::exists(path)) throw IoError("no such checkpoint: " + path.string());
  c10::IValue value;
  try {
    value = torch::pickle_load(read_bytes(path));
  } catch (const c10::Error& e) {
    throw LoadError("cannot read checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
  if (!value.isGenericDict()) throw LoadError(path.string() + " is not a checkpoint");
  auto root = value.toGenericDict();
  auto field = [&](const char* key) -> c10::IValue {
    if (!root.contains(key)) throw LoadError(path.string() + " lacks the '" + key + "' field");
    return root.at(key);
  };
  if (!field("format").isString() || field("format").toStringRef() != kCheckpointFormat) {
    throw LoadError(path.string() + " is not a checkpoint of this tool");
  }
  const int64_t version = field("version").toInt();
  if (version != kCheckpointVersion) {
    throw LoadError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  RunConfig stored = parse_config_text(field("config").toStringRef(), false);
  if (expected) {
    std::vector<std::string> divergent;
    const auto& arch = architecture_keys();
    for (const auto& k : config_differences(*expected, stored)) {
      if (std::find(arch.begin(), arch.end(), k) != arch.end()) divergent.push_back(k);
    }
    if (!divergent.empty()) {
      std::string msg = "checkpoint config differs from the current config in:";
      for (const auto& k : divergent) msg += " " + k;
      throw LoadError(msg);
    }
  }
  LoadedCheckpoint out;
  out.pipeline = build_pipeline(expected ? *expected : stored);
  out.epoch = field("epoch").toInt();
  out.history = history_from_text(field("history").toStringRef());

  std::map<std::string, torch::Tensor> model_state;
  for (auto& [name, t] : named_state(*out.pipeline.model)) model_state.emplace(name, t);
  std::set<std::string> restored;
  torch::NoGradGuard guard;
  for (const auto& item : field("tensors").toGenericDict()) {
    const std::string name = item.key().toStringRef();
    auto it = model_state.find(name);
    if (it == model_state.end()) throw LoadError("checkpoint tensor " + name + " has no slot");
    torch::Tensor src = item.value().toTensor();
    if (!src.sizes().equals(it->second.sizes())) {
      throw LoadError("checkpoint tensor " + name + " has the wrong shape");
    }
    it->second.copy_(src);
    restored.insert(name);
  }
  const auto groups = parameter_groups(*out.pipeline.model);
  for (const auto& [name, t] : model_state) {
    if (out.pipeline.policy.is_trainable(group_of(name, groups)) && !restored.count(name)) {
      throw LoadError("checkpoint lacks trainable tensor " + name);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

Batch make_batch(const std::vector<ModelInput>& inputs) {
  if (inputs.empty()) throw RequestError("empty batch");
  Batch b;
  std::vector<torch::Tensor> images, masks;
  for (const auto& in : inputs) {
    images.push_back(in.image);
    masks.push_back(in.mask);
    b.ids.push_back(in.id);
  }
  b.images = torch::stack(images);
  b.masks = torch::stack(masks);
  return b;
}

Trainer::Trainer(const RunConfig& cfg) : Trainer(build_pipeline(cfg)) {}

Trainer::Trainer(Pipeline pipeline) : pipeline_(std::move(pipeline)) {
  std::vector<torch::Tensor> params = trainable_parameters(*pipeline_.model);
  if (!params.empty()) {
    const TrainConfig& t = pipeline_.cfg.train;
    optimizer_ = std::make_unique<torch::optim::Adam>(
        params, torch::optim::AdamOptions(t.learning_rate).betas({t.beta1, t.beta2}));
  }
}

StepResult Trainer::step(const Batch& batch) {
  auto& model = pipeline_.model;
  const RunConfig& cfg = pipeline_.cfg;
  model->train();
  reapply_frozen_modes(*model, pipeline_.policy);

  ForwardOutput out = model->forward(batch.images);
  torch::Tensor final_probs = torch::sigmoid(out.final_logits).squeeze(1);
  torch::Tensor final_loss = focal_loss(final_probs, batch.masks, cfg.profile.focal);
  torch::Tensor total = cfg.train.final_weight * final_loss;
  torch::Tensor coarse_loss = torch::zeros({});
  if (out.coarse_probs.defined()) {
    torch::Tensor target = nearest_resize_batch(batch.masks, out.coarse_probs.size(1));
    coarse_loss = focal_loss(out.coarse_probs, target, cfg.profile.focal);
    total = total + cfg.train.coarse_weight * coarse_loss;
  }
  StepResult r;
  r.coarse_loss = coarse_loss.item<double>();
  r.final_loss = final_loss.item<double>();
  if (!std::isfinite(r.coarse_loss) || !std::isfinite(r.final_loss)) {
    std::ostringstream os;
    os << "non-finite loss at step " << steps_ + 1 << " (epoch " << epoch_ << ", coarse "
       << r.coarse_loss << ", final " << r.final_loss << ", samples";
    for (const auto& id : batch.ids) os << ' ' << id;
    os << ')';
    throw NumericError(os.str());
  }
  if (optimizer_ && total.requires_grad()) {
    optimizer_->zero_grad();
    total.backward();
    optimizer_->step();
  }
  r.final_probs = final_probs.detach();
  ++steps_;
  return r;
}

// ---------------------------------------------------------------------------

std::optional<Dataset> load_eval_split(const RunConfig& cfg) {
  if (cfg.eval_split == "none") return std::nullopt;
  DatasetProfile p = cfg.profile;
  p.split = cfg.eval_split;
  LayoutDirs dirs = dataset_layout(p);
  if (!fs::is_directory(dirs.images) || !fs::is_directory(dirs.masks)) return std::nullopt;
  if (dirs.images == dataset_layout(cfg.profile).images) return std::nullopt;
  return load_dataset(p);
}

TrainResult train(const RunConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  Dataset data = load_dataset(cfg.profile);
  std::optional<Dataset> eval_data = load_eval_split(cfg);
  Trainer trainer(cfg);
  TrainResult result;
  result.run_dir = cfg.run_dir;

  std::ofstream metrics, epochs_log;
  if (opts.write_files) {
    fs::create_directories(cfg.run_dir / "checkpoints");
    fs::create_directories(cfg.run_dir / "reports");
    std::ofstream(cfg.run_dir / "config.txt") << config_to_text(cfg);
    metrics.open(cfg.run_dir / "metrics.csv", std::ios::trunc);
    epochs_log.open(cfg.run_dir / "epochs.csv", std::ios::trunc);
    if (!metrics || !epochs_log) throw IoError("cannot write into " + cfg.run_dir.string());
    metrics << "step,coarse_loss,final_loss,lr,epoch\n";
    epochs_log << "epoch,train_ber,eval_ber\n";
  }

  const auto n = static_cast<int64_t>(data.size());
  const int64_t bs = cfg.train.batch_size;
  const int64_t per_epoch = (n + bs - 1) / bs;
  const int64_t total_steps =
      cfg.train.max_steps > 0 ? cfg.train.max_steps : cfg.profile.epochs * per_epoch;
  const int64_t epochs = (total_steps + per_epoch - 1) / per_epoch;
  const NormalizeSpec spec = cfg.normalize_spec();

  std::vector<std::optional<DatasetSample>> cache(n <= 512 ? data.size() : 0);
  auto fetch = [&](int64_t i) -> DatasetSample {
    if (cache.empty()) return data.sample(static_cast<size_t>(i));
    auto& slot = cache[static_cast<size_t>(i)];
    if (!slot) slot = data.sample(static_cast<size_t>(i));
    return *slot;
  };

  std::optional<double> best;
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t epoch = 1; epoch <= epochs; ++epoch) {
    trainer.set_epoch(epoch);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(cfg.train.seed, 0x5eed, static_cast<uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    BerAccumulator train_ber(cfg.aggregation);

    for (int64_t b = 0; b < per_epoch && trainer.steps_taken() < total_steps; ++b) {
      std::vector<ModelInput> inputs;
      for (int64_t j = b * bs; j < std::min(n, (b + 1) * bs); ++j) {
        const int64_t idx = order[static_cast<size_t>(j)];
        DatasetSample s = fetch(idx);
        if (cfg.train.augment) {
          s = augment(s, derive_seed(cfg.train.seed, static_cast<uint64_t>(epoch),
                                     static_cast<uint64_t>(idx)),
                      cfg.train.augmentation);
        }
        inputs.push_back(resize_normalize(s, spec));
      }
      Batch batch = make_batch(inputs);
      StepResult r = trainer.step(batch);
      StepRecord rec{trainer.steps_taken(), r.coarse_loss, r.final_loss, cfg.train.learning_rate,
                     epoch};
      result.steps.push_back(rec);
      if (opts.write_files) {
        metrics << rec.step << ',' << fmt(rec.coarse_loss) << ',' << fmt(rec.final_loss) << ','
                << fmt(rec.lr) << ',' << rec.epoch << '\n';
      }
      torch::Tensor pred = r.final_probs.ge(cfg.threshold);
      for (int64_t i = 0; i < pred.size(0); ++i) {
        train_ber.add(ber_of(pred[i], batch.masks[i].ge(0.5)));
      }
    }

    EpochRecord er;
    er.epoch = epoch;
    er.train_ber = train_ber.summary().ber;
    if (eval_data) er.eval_ber = evaluate(trainer.pipeline(), *eval_data).summary.ber;
    result.epochs.push_back(er);
    const double score = er.eval_ber.value_or(er.train_ber);
    const bool improved = !best || score < *best;
    if (improved) best = score;
    if (opts.write_files) {
      epochs_log << er.epoch << ',' << fmt(er.train_ber) << ','
                 << (er.eval_ber ? fmt(*er.eval_ber) : std::string()) << '\n';
      metrics.flush();
      epochs_log.flush();
      result.last_checkpoint = cfg.run_dir / "checkpoints" / "last.ckpt";
      save_checkpoint(result.last_checkpoint, trainer.pipeline(), epoch, result.epochs);
      if (improved) {
        result.best_checkpoint = cfg.run_dir / "checkpoints" / "best.ckpt";
        save_checkpoint(result.best_checkpoint, trainer.pipeline(), epoch, result.epochs);
      }
    }
    if (opts.log) {
      *opts.log << "epoch " << epoch << "/" << epochs << "  steps " << trainer.steps_taken()
                << "  train BER " << er.train_ber;
      if (er.eval_ber) *opts.log << "  eval BER " << *er.eval_ber;
      *opts.log << "\n";
    }
  }
  result.pipeline = trainer.pipeline();
  return result;
}

// ---------------------------------------------------------------------------

InferenceResult infer(Pipeline& pipeline, const torch::Tensor& image) {
  if (image.dim() != 3 || image.size(0) != 3) throw RequestError("image must be (3, H, W)");
  const int64_t h = image.size(1), w = image.size(2);
  torch::NoGradGuard guard;
  pipeline.model->eval();
  torch::Tensor x = prepare_image(image, pipeline.cfg.normalize_spec()).unsqueeze(0);
  ForwardOutput out = pipeline.model->forward(x);
  torch::Tensor probs = torch::sigmoid(out.final_logits);
  if (probs.size(2) != h || probs.size(3) != w) {
    probs = F::interpolate(probs, F::InterpolateFuncOptions()
                                      .size(std::vector<int64_t>{h, w})
                                      .mode(torch::kBilinear)
                                      .align_corners(false));
  }
  InferenceResult r;
  r.probs = probs.squeeze(0).squeeze(0).contiguous();
  r.mask = r.probs.ge(pipeline.cfg.threshold).to(torch::kUInt8);
  if (out.coarse_probs.defined()) r.coarse = out.coarse_probs[0].contiguous();
  r.prompts = out.prompts.front();
  return r;
}

EvalResult evaluate(Pipeline& pipeline, const Dataset& data) {
  EvalResult result;
  BerAccumulator acc(pipeline.cfg.aggregation);
  for (size_t i = 0; i < data.size(); ++i) {
    DatasetSample s = data.sample(i);
    InferenceResult r = infer(pipeline, s.image);
    EvalRow row{s.id, ber_of(r.mask, s.gt_mask)};
    acc.add(row.report);
    result.rows.push_back(std::move(row));
  }
  result.summary = acc.summary();
  result.degenerate_images = acc.degenerate_images();
  return result;
}

}  // namespace shadeadapt
