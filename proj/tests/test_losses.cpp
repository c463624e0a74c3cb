#include "oracles.hpp"

#include "shadeadapt/errors.hpp"
#include "shadeadapt/losses.hpp"

#include <doctest.h>

using namespace shadeadapt;

TEST_CASE("focal loss closed form") {
  auto l = focal_loss(torch::tensor({0.5}), torch::tensor({1.0}), {8.0 / 9.0, 2.0});
  CHECK(std::abs(l.item<double>() - 0.154033) <= 1e-5);
  CHECK(std::abs(l.item<double>() - 8.0 / 9.0 * 0.25 * std::log(2.0)) < 1e-6);
}

TEST_CASE("focal loss with gamma 0 is half of BCE") {
  torch::manual_seed(3);
  auto p = torch::rand({2, 5, 5}, torch::kFloat64) * 0.98 + 0.01;
  auto y = torch::randint(0, 2, {2, 5, 5}, torch::kFloat64);
  double focal = focal_loss(p, y, {0.5, 0.0}).item<double>();
  double bce = torch::binary_cross_entropy(p, y).item<double>();
  CHECK(std::abs(focal - 0.5 * bce) < 1e-6);
}

TEST_CASE("focal loss matches a per-pixel oracle") {
  torch::manual_seed(4);
  auto p = torch::rand({3, 4, 6}, torch::kFloat64);
  auto y = torch::randint(0, 2, {3, 4, 6}, torch::kFloat64);
  double expected = 0;
  for (int64_t b = 0; b < 3; ++b) {
    double s = 0;
    for (int64_t i = 0; i < 24; ++i) {
      s += oracle::focal_pixel(p[b].flatten()[i].item<double>(), y[b].flatten()[i].item<double>(),
                               0.7, 2.0);
    }
    expected += s / 24;
  }
  expected /= 3;
  CHECK(focal_loss(p, y, {0.7, 2.0}).item<double>() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("focal loss gradient matches finite differences") {
  torch::manual_seed(5);
  auto p = (torch::rand({2, 3, 3}, torch::kFloat64) * 0.9 + 0.05).requires_grad_(true);
  auto y = torch::randint(0, 2, {2, 3, 3}, torch::kFloat64);
  FocalParams fp{8.0 / 9.0, 2.0};
  focal_loss(p, y, fp).backward();
  auto grad = p.grad().flatten();
  const double h = 1e-6;
  for (int64_t i = 0; i < p.numel(); ++i) {
    auto plus = p.detach().clone(), minus = p.detach().clone();
    plus.view(-1)[i] += h;
    minus.view(-1)[i] -= h;
    double fd = (focal_loss(plus, y, fp).item<double>() - focal_loss(minus, y, fp).item<double>()) /
                (2 * h);
    double g = grad[i].item<double>();
    CHECK(std::abs(g - fd) <= 1e-3 * std::max(std::abs(fd), 1e-8));
  }
}

TEST_CASE("focal loss edge values stay finite") {
  auto l = focal_loss(torch::tensor({0.0, 1.0}), torch::tensor({1.0, 0.0}), {});
  CHECK(std::isfinite(l.item<double>()));
  CHECK(focal_loss(torch::tensor({1.0}), torch::tensor({1.0}), {}).item<double>() < 1e-9);
}

TEST_CASE("focal parameter and shape checks") {
  CHECK_THROWS_AS(focal_loss(torch::zeros({2}), torch::zeros({3}), {}), RequestError);
  CHECK_THROWS_AS(focal_loss(torch::zeros({2}), torch::zeros({2}), {1.0, 2.0}), ConfigError);
  CHECK_THROWS_AS(focal_loss(torch::zeros({2}), torch::zeros({2}), {0.5, -1.0}), ConfigError);
}

TEST_CASE("BER matches pixel counting") {
  std::mt19937_64 rng(9);
  std::bernoulli_distribution coin(0.4);
  for (int t = 0; t < 50; ++t) {
    std::vector<uint8_t> pred(256), gt(256);
    for (auto& v : pred) v = coin(rng);
    for (auto& v : gt) v = coin(rng);
    gt[0] = 1;
    gt[1] = 0;
    CHECK(ber_compute(pred, gt).ber == oracle::ber(pred, gt));
  }
}

TEST_CASE("BER hand cases") {
  CHECK(ber_from_counts({50, 100, 100, 100}).ber == 25.0);
  auto r = ber_from_counts({50, 100, 100, 100});
  CHECK(*r.ber_s == 50.0);
  CHECK(*r.ber_ns == 0.0);
  std::vector<uint8_t> same{0, 1, 1, 0};
  CHECK(ber_compute(same, same).ber == 0.0);
  std::vector<uint8_t> inv{1, 0, 0, 1};
  CHECK(ber_compute(inv, same).ber == 100.0);
}

TEST_CASE("BER with a missing class") {
  std::vector<uint8_t> gt(4, 0), pred{0, 1, 0, 0};
  auto r = ber_compute(pred, gt);
  CHECK(r.degenerate());
  CHECK_FALSE(r.ber_s);
  CHECK(r.ber == 25.0);
  CHECK_THROWS_AS(ber_from_counts({0, 0, 0, 0}), RequestError);
  std::vector<uint8_t> bad{2, 0, 0, 0};
  CHECK_THROWS_AS(ber_compute(bad, gt), RequestError);
  std::vector<uint8_t> short_mask{0};
  CHECK_THROWS_AS(ber_compute(short_mask, gt), RequestError);
}

TEST_CASE("BER aggregation modes") {
  BerAccumulator per_image, pooled(BerAggregation::PixelPooled);
  for (auto c : {BerCounts{10, 10, 10, 10}, BerCounts{0, 90, 10, 90}}) {
    per_image.add(ber_from_counts(c));
    pooled.add(ber_from_counts(c));
  }
  CHECK(per_image.summary().ber == doctest::Approx(25.0));
  CHECK(pooled.summary().ber == doctest::Approx(100.0 * (1.0 - 0.5 * (10.0 / 20 + 100.0 / 100))));
  BerAccumulator deg;
  deg.add(ber_from_counts({0, 4, 0, 4}));
  deg.add(ber_from_counts({2, 2, 4, 2}));
  CHECK(deg.degenerate_images() == 1);
  CHECK(*deg.summary().ber_s == doctest::Approx(50.0));
}

TEST_CASE("binarize threshold") {
  std::vector<float> p{0.2f, 0.5f, 0.7f};
  CHECK(binarize(p, 0.5) == std::vector<uint8_t>{0, 1, 1});
  CHECK_THROWS_AS(binarize(p, 1.0), RequestError);
}
