#include "support.hpp"

#include "shadeadapt/ablation.hpp"
#include "shadeadapt/errors.hpp"
#include "shadeadapt/image_io.hpp"
#include "shadeadapt/report.hpp"
#include "shadeadapt/trainer.hpp"

#include <doctest.h>
#include <json.hpp>

#include <fstream>
#include <sstream>

using namespace shadeadapt;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Batch toy_batch(const RunConfig& cfg, size_t n) {
  Dataset data = load_dataset(cfg.profile);
  std::vector<ModelInput> inputs;
  for (size_t i = 0; i < n; ++i) inputs.push_back(resize_normalize(data.sample(i), cfg.normalize_spec()));
  return make_batch(inputs);
}

bool exempt(const std::string& name) {
  for (int i = 1; i <= 3; ++i) {
    if (name.rfind("mask_decoder.output_hypernetworks_mlps." + std::to_string(i) + ".", 0) == 0) {
      return true;
    }
  }
  return name.rfind("mask_decoder.iou_prediction_head.", 0) == 0;
}

}  // namespace

TEST_CASE("one epoch writes the run directory") {
  support::TempDir dir("epoch");
  auto data = support::synthetic(dir / "data", 4);
  RunConfig cfg = support::toy_config(data, dir / "run", {{"batch_size", "2"}});
  TrainResult r = train(cfg);
  CHECK(r.steps.size() == 2);
  CHECK(r.epochs.size() == 1);
  for (auto f : {"config.txt", "metrics.csv", "epochs.csv", "checkpoints/last.ckpt",
                 "checkpoints/best.ckpt"}) {
    CHECK(fs::exists(dir / "run" / f));
  }
  std::istringstream metrics(slurp(dir / "run" / "metrics.csv"));
  std::string line;
  int lines = 0;
  while (std::getline(metrics, line)) ++lines;
  CHECK(lines == 3);
  CHECK(config_differences(parse_config(dir / "run" / "config.txt"), cfg).empty());
}

TEST_CASE("max_steps overrides the epoch budget") {
  support::TempDir dir("steps");
  auto data = support::synthetic(dir / "data", 4);
  RunConfig cfg = support::toy_config(data, dir / "run",
                                      {{"batch_size", "4"}, {"epochs", "50"}, {"max_steps", "3"}});
  TrainOptions opts;
  opts.write_files = false;
  TrainResult r = train(cfg, opts);
  CHECK(r.steps.size() == 3);
  CHECK(r.epochs.size() == 3);
  CHECK_FALSE(fs::exists(dir / "run"));
}

TEST_CASE("all-frozen training leaves the loss constant") {
  support::TempDir dir("frozen");
  auto data = support::synthetic(dir / "data", 2);
  RunConfig cfg = support::toy_config(
      data, dir / "run",
      {{"freeze_adapters", "true"}, {"freeze_mask_decoder", "true"},
       {"freeze_prompt_decoder", "true"}, {"augment", "false"}, {"batch_size", "2"}});
  Trainer t(cfg);
  CHECK(trainable_parameters(*t.pipeline().model).empty());
  Batch b = toy_batch(cfg, 2);
  auto first = t.step(b);
  auto second = t.step(b);
  CHECK(first.final_loss == second.final_loss);
  CHECK(first.coarse_loss == second.coarse_loss);
}

TEST_CASE("every trainable parameter receives gradient") {
  support::TempDir dir("grad");
  auto data = support::synthetic(dir / "data", 2);
  for (int seed = 0; seed < 5; ++seed) {
    RunConfig cfg = support::toy_config(data, dir / "run", {{"base_seed", std::to_string(seed)}});
    Pipeline p = build_pipeline(cfg);
    p.model->train();
    reapply_frozen_modes(*p.model, p.policy);
    Batch b = toy_batch(cfg, 2);
    auto out = p.model->forward(b.images);
    auto final_probs = torch::sigmoid(out.final_logits).squeeze(1);
    auto loss = focal_loss(final_probs, b.masks, cfg.profile.focal) +
                focal_loss(out.coarse_probs, resize_mask_nearest(b.masks, 32, 32), cfg.profile.focal);
    loss.backward();
    int checked = 0;
    for (const auto& item : p.model->named_parameters()) {
      const auto& t = item.value();
      if (!t.requires_grad()) {
        CHECK_FALSE(t.grad().defined());
        continue;
      }
      if (exempt(item.key())) continue;
      INFO(item.key());
      REQUIRE(t.grad().defined());
      CHECK(t.grad().abs().sum().item<double>() > 0.0);
      ++checked;
    }
    CHECK(checked > 50);
  }
}

TEST_CASE("checkpoint round trip restores identical outputs") {
  support::TempDir dir("ckpt");
  auto data = support::synthetic(dir / "data", 4);
  RunConfig cfg = support::toy_config(data, dir / "run", {{"batch_size", "2"}});
  TrainResult r = train(cfg);
  auto sample = load_dataset(cfg.profile).sample(0);
  auto before = infer(r.pipeline, sample.image);
  LoadedCheckpoint loaded = load_checkpoint(r.last_checkpoint, &cfg);
  auto after = infer(loaded.pipeline, sample.image);
  CHECK(torch::equal(before.probs, after.probs));
  CHECK(loaded.epoch == 1);
  REQUIRE(loaded.history.size() == 1);
  CHECK(loaded.history[0].train_ber == r.epochs[0].train_ber);
  auto restored = named_state(*loaded.pipeline.model);
  auto original = named_state(*r.pipeline.model);
  REQUIRE(restored.size() == original.size());
  for (size_t i = 0; i < original.size(); ++i) {
    INFO(original[i].first);
    CHECK(restored[i].first == original[i].first);
    CHECK(torch::equal(restored[i].second, original[i].second));
  }

  RunConfig other = with_overrides(cfg, {{"adapter_ratio", "0.5"}});
  try {
    load_checkpoint(r.last_checkpoint, &other);
    FAIL("expected a load error");
  } catch (const LoadError& e) {
    CHECK(std::string(e.what()).find("adapter_ratio") != std::string::npos);
  }
  RunConfig harmless = with_overrides(cfg, {{"learning_rate", "0.01"}});
  CHECK_NOTHROW(load_checkpoint(r.last_checkpoint, &harmless));

  std::string bytes = slurp(r.last_checkpoint);
  auto root = torch::pickle_load(std::vector<char>(bytes.begin(), bytes.end())).toGenericDict();
  root.insert_or_assign(std::string("version"), c10::IValue(kCheckpointVersion + 1));
  auto out = torch::pickle_save(c10::IValue(root));
  std::ofstream(dir / "v2.ckpt", std::ios::binary).write(out.data(), static_cast<std::streamsize>(out.size()));
  CHECK_THROWS_AS(load_checkpoint(dir / "v2.ckpt"), LoadError);
  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  CHECK_THROWS_AS(load_checkpoint(dir / "junk.ckpt"), LoadError);
}

TEST_CASE("inference is deterministic and sized to the input") {
  support::TempDir dir("infer");
  auto data = support::synthetic(dir / "data", 1);
  RunConfig cfg = support::toy_config(data, dir / "run");
  Pipeline p = build_pipeline(cfg);
  auto image = torch::rand({3, 50, 70});
  auto a = infer(p, image);
  auto b = infer(p, image);
  CHECK(torch::equal(a.probs, b.probs));
  CHECK(a.mask.sizes() == torch::IntArrayRef{50, 70});
  CHECK(a.coarse.sizes() == torch::IntArrayRef{32, 32});
  CHECK(a.prompts.points.size() == 64);
  CHECK_THROWS_AS(infer(p, torch::rand({1, 8, 8})), RequestError);
}

TEST_CASE("grid of sixteen yields 256 prompts") {
  support::TempDir dir("g16");
  auto data = support::synthetic(dir / "data", 1);
  RunConfig cfg = support::toy_config(data, dir / "run", {{"grid_size", "16"}});
  Pipeline p = build_pipeline(cfg);
  auto r = infer(p, torch::rand({3, 64, 64}));
  CHECK(r.prompts.points.size() == 256);
  for (const auto& pt : r.prompts.points) CHECK(pt.label == (pt.score >= 0.5f ? 1 : 0));
}

TEST_CASE("evaluation reports one row per image") {
  support::TempDir dir("eval");
  auto data = support::synthetic(dir / "data", 3);
  RunConfig cfg = support::toy_config(data, dir / "run");
  Pipeline p = build_pipeline(cfg);
  EvalResult r = evaluate(p, load_dataset(cfg.profile));
  REQUIRE(r.rows.size() == 3);
  std::istringstream csv(eval_csv(r));
  std::vector<std::string> lines;
  for (std::string l; std::getline(csv, l);) lines.push_back(l);
  REQUIRE(lines.size() == 5);
  CHECK(lines[0] == "filename,Tp,Tn,Np,Nn,ber");
  CHECK(lines[4].rfind("summary,", 0) == 0);
  auto j = nlohmann::json::parse(eval_json(r));
  CHECK(j["rows"].size() == 3);
  double mean = 0;
  for (const auto& row : r.rows) mean += row.report.ber;
  CHECK(j["ber"].get<double>() == doctest::Approx(mean / 3));
}

TEST_CASE("prompt overlay marks points") {
  ProbMap m(4, 4, std::vector<float>(16, 0.4f));
  std::vector<PointPrompt> pts{{1, 2, 1, 0.4f}, {3, 0, 0, 0.4f}};
  auto img = prompt_overlay(m, pts);
  auto j = nlohmann::json::parse(points_json(pts));
  for (const auto& p : j) {
    auto px = img[p["y"].get<int64_t>()][p["x"].get<int64_t>()];
    if (p["label"] == 1) {
      CHECK(px[0].item<int>() == 255);
      CHECK(px[1].item<int>() == 0);
    } else {
      CHECK(px[0].item<int>() == 0);
      CHECK(px[1].item<int>() == 255);
    }
  }
  CHECK(img[0][0][0].item<int>() == 102);
  CHECK(img[0][0][1].item<int>() == 102);
  CHECK_THROWS_AS(prompt_overlay(m, {{4, 0, 1, 0.f}}), RequestError);
}

TEST_CASE("ablation matrices") {
  CHECK(builtin_matrix("components").size() == 5);
  CHECK(builtin_matrix("grid").size() == 4);
  auto cells = parse_matrix("# c\na: tau=0.3 k=2\n\nb: grid_size=4\n");
  REQUIRE(cells.size() == 2);
  CHECK(cells[0].overrides.size() == 2);
  CHECK_THROWS_AS(parse_matrix("a tau=0.3\n"), ConfigError);
  CHECK_THROWS_AS(builtin_matrix("nope"), ConfigError);
}

TEST_CASE("small ablation is finite and repeatable") {
  support::TempDir dir("ablate");
  auto data = support::synthetic(dir / "data", 4);
  RunConfig cfg = support::toy_config(data, dir / "run", {{"max_steps", "2"}, {"batch_size", "2"}});
  auto cells = parse_matrix("g4k1: grid_size=4 k=1\ng4k2: grid_size=4 k=2\n"
                            "g8k1: grid_size=8 k=1\ng8k2: grid_size=8 k=2\n");
  auto a = run_ablation(cfg, cells, dir / "a");
  auto b = run_ablation(cfg, cells, dir / "b");
  REQUIRE(a.size() == 4);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(std::isfinite(a[i].ber));
    CHECK(a[i].ber == b[i].ber);
  }
  std::istringstream csv(ablation_csv(a));
  int lines = 0;
  for (std::string l; std::getline(csv, l);) ++lines;
  CHECK(lines == 5);
  CHECK_THROWS_AS(run_ablation(cfg, parse_matrix("bad: tau=2\n"), dir / "c"), ConfigError);
}
