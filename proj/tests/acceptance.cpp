// One line per acceptance criterion; exit status is the number of failures.

#include "oracles.hpp"
#include "support.hpp"

#include "shadeadapt/ablation.hpp"
#include "shadeadapt/freeze.hpp"
#include "shadeadapt/image_encoder.hpp"
#include "shadeadapt/report.hpp"
#include "shadeadapt/trainer.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

using namespace shadeadapt;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(int id, const std::string& name, double limit_s, const std::function<Outcome()>& fn) {
  auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (limit_s > 0 && secs >= limit_s) {
    o.pass = false;
    o.detail += " [over the " + std::to_string(static_cast<int>(limit_s)) + " s limit]";
  }
  if (!o.pass) ++failures;
  std::printf("%s %2d %-22s %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, name.c_str(),
              o.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string num(double v, const char* f = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct SamplingCase {
  ProbMap mask;
  int64_t g, k;
  double tau;
};

std::vector<SamplingCase> sampling_cases() {
  std::mt19937_64 rng(2024);
  const int64_t gs[] = {2, 4, 8, 16};
  std::vector<SamplingCase> cases;
  for (int t = 0; t < 200; ++t) {
    int64_t g = gs[t % 4], k = 1 + (t / 4) % 2;
    std::uniform_int_distribution<int64_t> side(std::max<int64_t>(8, g * k), 64);
    int64_t h = side(rng), w = side(rng);
    double tau = std::uniform_real_distribution<double>(0.05, 0.95)(rng);
    cases.push_back({oracle::random_mask(rng, h, w), g, k, tau});
  }
  return cases;
}

Outcome sampling_oracle() {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int64_t> count(0, 16);
  int mismatches = 0;
  for (const auto& c : sampling_cases()) {
    if (grid_sample(c.mask, c.g, c.k, c.tau) != oracle::grid(c.mask, c.g, c.k, c.tau)) ++mismatches;
    int64_t p = count(rng), n = count(rng);
    if (p + n == 0) p = 1;
    if (topk_sample(c.mask, p, n) != oracle::topk(c.mask, p, n)) ++mismatches;
  }
  return {mismatches == 0, "200 masks x {grid, topk}, mismatches " + std::to_string(mismatches)};
}

Outcome grid_coverage() {
  int bad = 0;
  for (const auto& c : sampling_cases()) {
    auto pts = grid_sample(c.mask, c.g, c.k, c.tau);
    if (static_cast<int64_t>(pts.size()) != c.g * c.g * c.k) {
      ++bad;
      continue;
    }
    std::map<std::pair<int64_t, int64_t>, int64_t> per_block;
    for (const auto& p : pts) {
      ++per_block[{p.y * c.g / c.mask.height(), p.x * c.g / c.mask.width()}];
      if (p.label != (static_cast<double>(p.score) >= c.tau ? 1 : 0)) ++bad;
      if (p.score != c.mask.at(p.y, p.x)) ++bad;
    }
    if (static_cast<int64_t>(per_block.size()) != c.g * c.g) ++bad;
    for (const auto& [b, n] : per_block) {
      if (n != c.k) ++bad;
    }
  }
  return {bad == 0, "g^2 k points, k per block, label rule; violations " + std::to_string(bad)};
}

Outcome ber_oracle() {
  std::mt19937_64 rng(31);
  std::bernoulli_distribution coin(0.35);
  int mismatches = 0;
  for (int t = 0; t < 100; ++t) {
    std::vector<uint8_t> pred(32 * 32), gt(32 * 32);
    for (auto& v : pred) v = coin(rng);
    for (auto& v : gt) v = coin(rng);
    if (ber_compute(pred, gt).ber != oracle::ber(pred, gt)) ++mismatches;
  }
  std::vector<uint8_t> gt(200, 0), pred(200, 0);
  for (int i = 0; i < 100; ++i) gt[i] = 1;
  for (int i = 0; i < 50; ++i) pred[i] = 1;
  double hand = ber_compute(pred, gt).ber;
  return {mismatches == 0 && hand == 25.0,
          "100 pairs mismatches " + std::to_string(mismatches) + ", hand case " + num(hand, "%.17g")};
}

Outcome focal_checks() {
  double closed =
      focal_loss(torch::tensor({0.5}, torch::kFloat64), torch::tensor({1.0}, torch::kFloat64),
                 {8.0 / 9.0, 2.0})
          .item<double>();
  bool ok1 = std::abs(closed - 0.154033) <= 1e-5;

  torch::manual_seed(17);
  auto p = torch::rand({4, 16, 16}, torch::kFloat64) * 0.98 + 0.01;
  auto y = torch::randint(0, 2, {4, 16, 16}, torch::kFloat64);
  double half_bce = 0.5 * torch::binary_cross_entropy(p, y).item<double>();
  double gamma0 = focal_loss(p, y, {0.5, 0.0}).item<double>();
  bool ok2 = std::abs(gamma0 - half_bce) <= 1e-6;

  auto q = (torch::rand({2, 4, 4}, torch::kFloat64) * 0.9 + 0.05).requires_grad_(true);
  auto t = torch::randint(0, 2, {2, 4, 4}, torch::kFloat64);
  FocalParams fp{8.0 / 9.0, 2.0};
  focal_loss(q, t, fp).backward();
  double worst = 0;
  for (int64_t i = 0; i < q.numel(); ++i) {
    auto a = q.detach().clone(), b = q.detach().clone();
    a.view(-1)[i] += 1e-6;
    b.view(-1)[i] -= 1e-6;
    double fd = (focal_loss(a, t, fp).item<double>() - focal_loss(b, t, fp).item<double>()) / 2e-6;
    worst = std::max(worst, std::abs(q.grad().view(-1)[i].item<double>() - fd) / std::abs(fd));
  }
  bool ok3 = worst <= 1e-3;
  return {ok1 && ok2 && ok3, "closed form " + num(closed) + ", |gamma0 - BCE/2| " +
                                 num(std::abs(gamma0 - half_bce), "%.2e") + ", grad rel err " +
                                 num(worst, "%.2e")};
}

Outcome adapter_checks() {
  torch::manual_seed(41);
  std::mt19937_64 rng(41);
  std::uniform_int_distribution<int64_t> d(1, 8);
  bool shapes = true;
  double oracle_err = 0;
  for (int t = 0; t < 20; ++t) {
    int64_t B = d(rng), N = d(rng) * 4, C = 8 * d(rng);
    Adapter a(AdapterConfig{C, 0.25, 1.0, 0.5});
    a->to(torch::kFloat64);
    auto x = torch::randn({B, N, C}, torch::kFloat64);
    auto yv = a->forward(TokenSequence(x)).data();
    shapes = shapes && yv.sizes() == x.sizes();
    oracle_err = std::max(oracle_err, (yv - oracle::adapter(*a, x)).abs().max().item<double>());
  }

  Adapter a(AdapterConfig{16, 0.25, 1.0, 0.3});
  a->to(torch::kFloat64);
  auto x = torch::randn({2, 5, 16}, torch::kFloat64);
  auto w = torch::randn({2, 5, 16}, torch::kFloat64);
  auto obj = [&] { return (a->forward(x) * w).sum(); };
  obj().backward();
  double worst = 0;
  const double h = 1e-4;
  for (auto& p : a->parameters()) {
    torch::NoGradGuard ng;
    auto g = p.grad().view(-1);
    for (int64_t i = 0; i < p.numel(); ++i) {
      double orig = p.view(-1)[i].item<double>();
      p.view(-1)[i] = orig + h;
      double up = obj().item<double>();
      p.view(-1)[i] = orig - h;
      double down = obj().item<double>();
      p.view(-1)[i] = orig;
      double fd = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(g[i].item<double>() - fd) / std::max(std::abs(fd), 1e-8));
    }
  }

  EncoderConfig cfg = EncoderConfig::toy();
  AdaptedBlock block(cfg, 1);
  {
    torch::NoGradGuard ng;
    block->adapter1->up->weight.zero_();
    block->adapter1->up->bias.zero_();
  }
  auto tokens = torch::randn({2, 8, 8, 32});
  auto adapted = block->attention_sublayer(tokens);
  auto saved = block->adapter1;
  block->adapter1 = nullptr;
  auto plain = block->attention_sublayer(tokens);
  block->adapter1 = saved;
  bool zero_equiv = torch::equal(adapted, plain);

  return {shapes && oracle_err <= 1e-6 && worst <= 1e-3 && zero_equiv,
          std::string("shapes ") + (shapes ? "ok" : "bad") + ", oracle err " + num(oracle_err, "%.2e") +
              ", grad rel err " + num(worst, "%.2e") + ", zero adapter " +
              (zero_equiv ? "exact" : "differs")};
}

Outcome freeze_soundness(const fs::path& work) {
  auto data = support::synthetic(work / "freeze_data", 8, 3);
  RunConfig cfg = support::toy_config(data, work / "freeze_run", {{"batch_size", "4"}});
  Trainer trainer(cfg);
  auto& model = trainer.pipeline().model;
  const auto& policy = trainer.pipeline().policy;
  auto groups = parameter_groups(*model);
  std::vector<std::pair<std::string, torch::Tensor>> before;
  for (const auto& [n, t] : named_state(*model)) before.emplace_back(n, t.clone());

  Dataset ds = load_dataset(cfg.profile);
  for (int s = 0; s < 10; ++s) {
    std::vector<ModelInput> in;
    for (int j = 0; j < 4; ++j) {
      in.push_back(resize_normalize(augment(ds.sample((s * 4 + j) % 8), s * 4 + j), cfg.normalize_spec()));
    }
    trainer.step(make_batch(in));
  }

  std::map<std::string, bool> changed;
  int frozen_moved = 0;
  auto after = named_state(*model);
  for (size_t i = 0; i < after.size(); ++i) {
    const std::string g = group_of(after[i].first, groups);
    bool same = torch::equal(before[i].second, after[i].second);
    if (policy.is_trainable(g)) {
      changed[g] = changed[g] || !same;
    } else if (!same) {
      ++frozen_moved;
    }
  }
  int adapters = 0, unchanged = 0;
  std::string stuck;
  for (const auto& [g, c] : changed) {
    if (g.find(".adapter") != std::string::npos) ++adapters;
    if (!c) {
      ++unchanged;
      stuck += " " + g;
    }
  }
  bool has_decoders = changed.count("mask_decoder") && changed.count("prompt_generator.decoder");
  bool ok = frozen_moved == 0 && unchanged == 0 && adapters == 4 && has_decoders;
  return {ok, "frozen tensors moved " + std::to_string(frozen_moved) + ", trainable groups " +
                  std::to_string(changed.size()) + " (" + std::to_string(adapters) +
                  " adapters), unchanged" + (stuck.empty() ? std::string(" none") : stuck)};
}

Outcome overfit(const fs::path& work) {
  auto data = support::synthetic(work / "overfit_data", 8, 1);
  RunConfig cfg = support::toy_config(data, work / "overfit_run",
                                      {{"batch_size", "4"},
                                       {"max_steps", "200"},
                                       {"learning_rate", "0.001"},
                                       {"augment", "false"}});
  TrainOptions opts;
  opts.write_files = false;
  TrainResult r = train(cfg, opts);
  EvalResult e = evaluate(r.pipeline, load_dataset(cfg.profile));
  return {r.steps.size() == 200 && e.summary.ber < 5.0,
          std::to_string(r.steps.size()) + " steps, training-set BER " + num(e.summary.ber, "%.3f") +
              " (limit 5.0)"};
}

Outcome determinism(const fs::path& work) {
  auto data = support::synthetic(work / "det_data", 8, 2);
  std::string a, b;
  for (const char* tag : {"det_a", "det_b"}) {
    RunConfig cfg = support::toy_config(data, work / tag,
                                        {{"batch_size", "4"}, {"epochs", "3"}, {"seed", "5"}});
    train(cfg);
    (a.empty() ? a : b) = slurp(work / tag / "metrics.csv");
  }
  int rows = static_cast<int>(std::count(a.begin(), a.end(), '\n')) - 1;
  return {!a.empty() && a == b, std::to_string(rows) + " metric rows, files " +
                                    (a == b ? "bit-identical" : "differ")};
}

Outcome census() {
  ShadowModel model(ModelConfig::vit_b());
  auto policy = FreezePolicy::standard(*model);
  Census c = parameter_census(*model, policy);
  const double target = 11564121.0;
  double rel = (c.trainable_count - target) / target;
  std::cout << "     notice: no foundation checkpoint configured; counts follow from the "
               "architecture, weights are random\n";
  return {std::abs(rel) <= 0.10, "trainable " + std::to_string(c.trainable_count) + " vs 11564121 (" +
                                     num(100 * rel, "%+.2f") + "%), total " +
                                     std::to_string(c.total())};
}

Outcome ablation(const fs::path& work) {
  auto data = support::synthetic(work / "abl_data", 8, 4);
  RunConfig base = support::toy_config(data, work / "abl_base",
                                       {{"batch_size", "4"}, {"max_steps", "20"}});
  int finite = 0, cells = 0;
  std::string shape;
  for (const char* m : {"components", "grid"}) {
    auto rows = run_ablation(base, builtin_matrix(m), work / (std::string("abl_") + m));
    std::istringstream table(ablation_table(rows));
    for (std::string l; std::getline(table, l);) std::cout << "     " << l << "\n";
    for (const auto& r : rows) {
      ++cells;
      if (std::isfinite(r.ber)) ++finite;
    }
    shape += (shape.empty() ? "" : " + ") + std::to_string(rows.size());
  }
  return {cells == 9 && finite == 9,
          shape + " cells, finite BER in " + std::to_string(finite) + "/" + std::to_string(cells)};
}

}  // namespace

int main() {
  torch::set_num_threads(1);
  support::TempDir work("acceptance");
  criterion(1, "sampling oracle", 30, sampling_oracle);
  criterion(2, "grid coverage", 0, grid_coverage);
  criterion(3, "BER oracle", 0, ber_oracle);
  criterion(4, "focal loss", 0, focal_checks);
  criterion(5, "adapter correctness", 0, adapter_checks);
  criterion(6, "freeze soundness", 120, [&] { return freeze_soundness(work.path()); });
  criterion(7, "overfit smoke", 600, [&] { return overfit(work.path()); });
  criterion(8, "determinism", 0, [&] { return determinism(work.path()); });
  criterion(9, "parameter census", 0, census);
  criterion(10, "ablation harness", 0, [&] { return ablation(work.path()); });
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
