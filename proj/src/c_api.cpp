#include "shadeadapt/c_api.h"

#include "shadeadapt/ablation.hpp"
#include "shadeadapt/config.hpp"
#include "shadeadapt/errors.hpp"
#include "shadeadapt/image_io.hpp"
#include "shadeadapt/losses.hpp"
#include "shadeadapt/report.hpp"
#include "shadeadapt/synthetic.hpp"
#include "shadeadapt/trainer.hpp"

#include <json.hpp>

#include <cstring>
#include <iostream>
#include <string>

struct sa_config {
  shadeadapt::RunConfig cfg;
  bool require_dataset = true;
};

struct sa_model {
  shadeadapt::Pipeline pipeline;
};

namespace {

using namespace shadeadapt;
namespace fs = std::filesystem;

thread_local std::string g_last_error;

sa_status status_of(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return SA_ERR_CONFIG;
    case ErrorKind::Request: return SA_ERR_REQUEST;
    case ErrorKind::Numeric: return SA_ERR_NUMERIC;
    case ErrorKind::Ingest: return SA_ERR_INGEST;
    case ErrorKind::Load: return SA_ERR_LOAD;
    case ErrorKind::Io: return SA_ERR_IO;
    case ErrorKind::Internal: return SA_ERR_INTERNAL;
  }
  return SA_ERR_INTERNAL;
}

template <class Fn>
sa_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return SA_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const c10::Error& e) {
    g_last_error = e.what_without_backtrace();
    return SA_ERR_INTERNAL;
  } catch (const fs::filesystem_error& e) {
    g_last_error = e.what();
    return SA_ERR_IO;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return SA_ERR_INTERNAL;
  }
}

char* dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void put(char** out, const std::string& s) {
  if (out) *out = dup(s);
}

void need(const void* p, const char* what) {
  if (!p) throw RequestError(std::string(what) + " must not be NULL");
}

ProbMap probmap_of(const torch::Tensor& t) {
  torch::Tensor f = t.detach().to(torch::kFloat32).contiguous();
  std::vector<float> v(f.data_ptr<float>(), f.data_ptr<float>() + f.numel());
  return ProbMap(f.size(0), f.size(1), std::move(v));
}

sa_status copy_points(const std::vector<PointPrompt>& pts, sa_point* out, size_t capacity,
                      size_t* count) {
  *count = pts.size();
  if (pts.size() > capacity) {
    throw RequestError("output buffer holds " + std::to_string(capacity) + " points, need " +
                       std::to_string(pts.size()));
  }
  for (size_t i = 0; i < pts.size(); ++i) {
    out[i] = sa_point{pts[i].x, pts[i].y, pts[i].label, pts[i].score};
  }
  return SA_OK;
}

nlohmann::json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

extern "C" {

const char* sa_status_name(sa_status status) {
  if (status == SA_OK) return "ok";
  if (status >= SA_ERR_CONFIG && status <= SA_ERR_INTERNAL) {
    return error_kind_name(static_cast<ErrorKind>(status - 1));
  }
  return "unknown";
}

const char* sa_last_error(void) { return g_last_error.c_str(); }

void sa_string_free(char* s) { std::free(s); }

sa_status sa_config_load(const char* path, int require_dataset, sa_config** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    auto c = std::make_unique<sa_config>();
    c->require_dataset = require_dataset != 0;
    c->cfg = parse_config(path, c->require_dataset);
    *out = c.release();
  });
}

sa_status sa_config_parse(const char* text, int require_dataset, sa_config** out) {
  return guarded([&] {
    need(text, "text");
    need(out, "out");
    auto c = std::make_unique<sa_config>();
    c->require_dataset = require_dataset != 0;
    c->cfg = parse_config_text(text, c->require_dataset);
    *out = c.release();
  });
}

sa_status sa_config_set(sa_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    need(cfg, "cfg");
    need(key, "key");
    need(value, "value");
    cfg->cfg = with_overrides(cfg->cfg, {{key, value}});
  });
}

sa_status sa_config_to_text(const sa_config* cfg, char** out) {
  return guarded([&] {
    need(cfg, "cfg");
    need(out, "out");
    *out = dup(config_to_text(cfg->cfg));
  });
}

void sa_config_free(sa_config* cfg) { delete cfg; }

sa_status sa_synthesize(const char* root, int64_t count, int64_t size, uint64_t seed) {
  return guarded([&] {
    need(root, "root");
    write_synthetic_dataset(root, SyntheticSpec{count, size, seed});
  });
}

sa_status sa_train(const sa_config* cfg, char** summary_json) {
  return guarded([&] {
    need(cfg, "cfg");
    TrainOptions opts;
    opts.log = &std::cerr;
    TrainResult r = train(cfg->cfg, opts);
    nlohmann::json j;
    j["run_dir"] = r.run_dir.string();
    j["last_checkpoint"] = r.last_checkpoint.string();
    j["best_checkpoint"] = r.best_checkpoint.string();
    j["steps"] = r.steps.size();
    if (!r.steps.empty()) {
      j["final_coarse_loss"] = r.steps.back().coarse_loss;
      j["final_final_loss"] = r.steps.back().final_loss;
    }
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : r.epochs) {
      epochs.push_back({{"epoch", e.epoch}, {"train_ber", e.train_ber}, {"eval_ber", opt_json(e.eval_ber)}});
    }
    j["epochs"] = epochs;
    put(summary_json, j.dump(2) + "\n");
  });
}

sa_status sa_model_load(const char* checkpoint, const sa_config* cfg, sa_model** out) {
  return guarded([&] {
    need(checkpoint, "checkpoint");
    need(out, "out");
    auto m = std::make_unique<sa_model>();
    m->pipeline = load_checkpoint(checkpoint, cfg ? &cfg->cfg : nullptr).pipeline;
    *out = m.release();
  });
}

sa_status sa_model_create(const sa_config* cfg, sa_model** out) {
  return guarded([&] {
    need(cfg, "cfg");
    need(out, "out");
    auto m = std::make_unique<sa_model>();
    m->pipeline = build_pipeline(cfg->cfg);
    *out = m.release();
  });
}

void sa_model_free(sa_model* model) { delete model; }

sa_status sa_infer_file(sa_model* model, const char* image_path, const char* out_dir,
                        char** result_json) {
  return guarded([&] {
    need(model, "model");
    need(image_path, "image_path");
    need(out_dir, "out_dir");
    const fs::path img(image_path);
    InferenceResult r = infer(model->pipeline, read_rgb(img));
    const fs::path dir(out_dir);
    const std::string stem = img.stem().string();
    const fs::path mask_path = dir / (stem + "_mask.png");
    write_gray_png(mask_path, r.mask.mul(255));
    nlohmann::json j;
    j["image"] = img.string();
    j["height"] = r.mask.size(0);
    j["width"] = r.mask.size(1);
    j["mask"] = mask_path.string();
    j["shadow_pixels"] = r.mask.sum().item<int64_t>();
    if (r.coarse.defined()) {
      const fs::path coarse_path = dir / (stem + "_coarse.png");
      write_gray_png(coarse_path, probmap_to_gray(probmap_of(r.coarse)));
      const fs::path points_path = dir / (stem + "_points.json");
      write_text_file(points_path, points_json(r.prompts.points));
      j["coarse"] = coarse_path.string();
      j["points"] = points_path.string();
      j["point_count"] = r.prompts.points.size();
    }
    put(result_json, j.dump(2) + "\n");
  });
}

sa_status sa_evaluate(sa_model* model, const sa_config* dataset_cfg, const char* out_dir,
                      char** result_json, char** table) {
  return guarded([&] {
    need(model, "model");
    const RunConfig& cfg = dataset_cfg ? dataset_cfg->cfg : model->pipeline.cfg;
    if (cfg.profile.root.empty()) throw ConfigError("required key 'root' is missing");
    Dataset data = load_dataset(cfg.profile);
    EvalResult r = evaluate(model->pipeline, data);
    if (out_dir) {
      write_text_file(fs::path(out_dir) / "eval.csv", eval_csv(r));
      write_text_file(fs::path(out_dir) / "eval.json", eval_json(r));
    }
    put(result_json, eval_json(r));
    put(table, eval_table(r));
  });
}

sa_status sa_sample_points_file(sa_model* model, const sa_config* cfg, const char* image_path,
                                const char* out_dir, char** points_out) {
  return guarded([&] {
    need(image_path, "image_path");
    need(out_dir, "out_dir");
    ProbMap coarse;
    std::vector<PointPrompt> points;
    if (model) {
      if (model->pipeline.cfg.model.prompts.empty()) {
        throw RequestError("the model was configured without prompts");
      }
      InferenceResult r = infer(model->pipeline, read_rgb(image_path));
      coarse = probmap_of(r.coarse);
      points = r.prompts.points;
      if (points.empty()) {
        points = assemble_prompts(coarse, model->pipeline.cfg.model.sampling, 0,
                                  model->pipeline.cfg.model.geometry())
                     .points;
      }
    } else {
      SamplingConfig s = cfg ? cfg->cfg.model.sampling : SamplingConfig{};
      coarse = gray_to_probmap(read_gray(image_path));
      points = assemble_prompts(coarse, s, 0, PromptGeometry{}).points;
    }
    const fs::path dir(out_dir);
    const std::string json = points_json(points);
    write_text_file(dir / "points.json", json);
    write_gray_png(dir / "coarse.png", probmap_to_gray(coarse));
    write_rgb_png(dir / "overlay.png", prompt_overlay(coarse, points));
    put(points_out, json);
  });
}

sa_status sa_ablate(const sa_config* cfg, const char* matrix, const char* out_dir,
                    char** result_json, char** table) {
  return guarded([&] {
    need(cfg, "cfg");
    need(matrix, "matrix");
    need(out_dir, "out_dir");
    auto cells = resolve_matrix(matrix);
    auto rows = run_ablation(cfg->cfg, cells, out_dir, &std::cerr);
    write_text_file(fs::path(out_dir) / "ablation.csv", ablation_csv(rows));
    write_text_file(fs::path(out_dir) / "ablation.json", ablation_json(rows));
    put(result_json, ablation_json(rows));
    put(table, ablation_table(rows));
  });
}

sa_status sa_census(const sa_config* cfg, sa_model* model, char** table, char** csv,
                    int64_t* trainable, int64_t* total) {
  return guarded([&] {
    if (!cfg && !model) throw RequestError("census needs a config or a model");
    Census c;
    if (model) {
      c = parameter_census(*model->pipeline.model, model->pipeline.policy);
    } else {
      Pipeline p = build_pipeline(cfg->cfg);
      c = parameter_census(*p.model, p.policy);
    }
    put(table, c.to_table());
    put(csv, c.to_csv());
    if (trainable) *trainable = c.trainable_count;
    if (total) *total = c.total();
  });
}

sa_status sa_grid_sample(const float* probs, int64_t height, int64_t width, int64_t g, int64_t k,
                         double tau, sa_point* out, size_t capacity, size_t* count) {
  return guarded([&] {
    need(probs, "probs");
    need(count, "count");
    if (height <= 0 || width <= 0) throw RequestError("mask dimensions must be positive");
    ProbMap m(height, width, std::vector<float>(probs, probs + height * width));
    copy_points(grid_sample(m, g, k, tau), out, capacity, count);
  });
}

sa_status sa_topk_sample(const float* probs, int64_t height, int64_t width, int64_t n_pos,
                         int64_t n_neg, sa_point* out, size_t capacity, size_t* count) {
  return guarded([&] {
    need(probs, "probs");
    need(count, "count");
    if (height <= 0 || width <= 0) throw RequestError("mask dimensions must be positive");
    ProbMap m(height, width, std::vector<float>(probs, probs + height * width));
    copy_points(topk_sample(m, n_pos, n_neg), out, capacity, count);
  });
}

sa_status sa_ber(const uint8_t* pred, const uint8_t* gt, size_t n, double* ber) {
  return guarded([&] {
    need(pred, "pred");
    need(gt, "gt");
    need(ber, "ber");
    *ber = ber_compute({pred, n}, {gt, n}).ber;
  });
}

sa_status sa_focal_loss(const float* pred, const float* target, size_t n, double alpha,
                        double gamma, double* loss) {
  return guarded([&] {
    need(pred, "pred");
    need(target, "target");
    need(loss, "loss");
    if (n == 0) throw RequestError("focal loss needs at least one element");
    auto p = torch::from_blob(const_cast<float*>(pred), {static_cast<int64_t>(n)}).to(torch::kFloat64);
    auto t = torch::from_blob(const_cast<float*>(target), {static_cast<int64_t>(n)}).to(torch::kFloat64);
    *loss = focal_loss(p, t, FocalParams{alpha, gamma}).item<double>();
  });
}

}  // extern "C"
