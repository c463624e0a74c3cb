#include "oracles.hpp"

#include "shadeadapt/errors.hpp"
#include "shadeadapt/sampling.hpp"

#include <doctest.h>

#include <set>

using namespace shadeadapt;

TEST_CASE("topk matches the scan oracle on random masks") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int64_t> side(2, 24), count(0, 6);
  for (int t = 0; t < 60; ++t) {
    ProbMap m = oracle::random_mask(rng, side(rng), side(rng));
    int64_t p = count(rng), n = count(rng);
    if (p + n == 0) p = 1;
    if (p + n > m.size()) continue;
    CHECK(topk_sample(m, p, n) == oracle::topk(m, p, n));
  }
}

TEST_CASE("topk ordering and disjointness") {
  ProbMap m(2, 3, {0.2f, 0.9f, 0.9f, 0.1f, 0.5f, 0.1f});
  auto pts = topk_sample(m, 2, 2);
  REQUIRE(pts.size() == 4);
  CHECK(pts[0] == PointPrompt{1, 0, 1, 0.9f});
  CHECK(pts[1] == PointPrompt{2, 0, 1, 0.9f});
  CHECK(pts[2] == PointPrompt{0, 1, 0, 0.1f});
  CHECK(pts[3] == PointPrompt{2, 1, 0, 0.1f});

  ProbMap flat = ProbMap::filled(2, 2, 0.5f);
  auto all = topk_sample(flat, 2, 2);
  std::set<std::pair<int64_t, int64_t>> seen;
  for (const auto& p : all) seen.insert({p.x, p.y});
  CHECK(seen.size() == 4);
}

TEST_CASE("topk argument errors") {
  ProbMap m = ProbMap::filled(3, 3, 0.5f);
  CHECK_THROWS_AS(topk_sample(m, 0, 0), RequestError);
  CHECK_THROWS_AS(topk_sample(m, -1, 2), RequestError);
  CHECK_THROWS_AS(topk_sample(m, 5, 5), RequestError);
}

TEST_CASE("block bounds differ by at most one") {
  CHECK(block_bounds(10, 4) == std::vector<int64_t>{0, 3, 5, 8, 10});
  CHECK(block_bounds(16, 4) == std::vector<int64_t>{0, 4, 8, 12, 16});
  CHECK(block_bounds(5, 5) == std::vector<int64_t>{0, 1, 2, 3, 4, 5});
}

TEST_CASE("grid sampling matches the oracle and covers every block") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int64_t> side(4, 40);
  const std::vector<int64_t> gs{1, 2, 3, 4, 8};
  for (int t = 0; t < 60; ++t) {
    ProbMap m = oracle::random_mask(rng, side(rng), side(rng));
    int64_t g = gs[t % gs.size()];
    int64_t k = 1 + t % 2;
    if (k * g > std::min(m.height(), m.width())) continue;
    double tau = 0.25 + 0.05 * (t % 10);
    auto got = grid_sample(m, g, k, tau);
    CHECK(got == oracle::grid(m, g, k, tau));
    REQUIRE(got.size() == static_cast<size_t>(g * g * k));
    auto rows = block_bounds(m.height(), g), cols = block_bounds(m.width(), g);
    for (int64_t b = 0; b < g * g; ++b) {
      for (int64_t i = 0; i < k; ++i) {
        const auto& p = got[b * k + i];
        CHECK(p.y >= rows[b / g]);
        CHECK(p.y < rows[b / g + 1]);
        CHECK(p.x >= cols[b % g]);
        CHECK(p.x < cols[b % g + 1]);
        CHECK(p.label == (p.score >= tau ? 1 : 0));
      }
    }
  }
}

TEST_CASE("grid sampling on a uniform map picks block corners") {
  auto pts = grid_sample(ProbMap::filled(4, 4, 0.7f), 2, 1, 0.5);
  REQUIRE(pts.size() == 4);
  CHECK(pts[0] == PointPrompt{0, 0, 1, 0.7f});
  CHECK(pts[1] == PointPrompt{2, 0, 1, 0.7f});
  CHECK(pts[2] == PointPrompt{0, 2, 1, 0.7f});
  CHECK(pts[3] == PointPrompt{2, 2, 1, 0.7f});
}

TEST_CASE("grid sampling errors") {
  ProbMap m = ProbMap::filled(8, 8, 0.2f);
  CHECK_THROWS_AS(grid_sample(m, 9, 1, 0.5), RequestError);
  CHECK_THROWS_AS(grid_sample(m, 4, 5, 0.5), RequestError);
  CHECK_THROWS_AS(grid_sample(m, 0, 1, 0.5), RequestError);
  CHECK_THROWS_AS(grid_sample(m, 2, 1, 1.0), RequestError);
  CHECK_THROWS_AS(grid_sample(m, 2, 1, 0.0), RequestError);
  CHECK_NOTHROW(grid_sample(m, 4, 4, 0.5));
}

TEST_CASE("probability map validation") {
  CHECK_THROWS_AS(ProbMap(2, 2, {0.1f, 0.2f, 0.3f}), RequestError);
  CHECK_THROWS_AS(ProbMap(1, 2, {0.1f, 1.5f}), RequestError);
  CHECK_THROWS_AS(ProbMap(1, 1, {std::nanf("")}), RequestError);
}

TEST_CASE("bounding box and encoder coordinates") {
  ProbMap m(3, 4, {0, 0, 0, 0, 0, 0.8f, 0.9f, 0, 0, 0, 0.6f, 0});
  auto box = bbox_from_mask(m, 0.5);
  REQUIRE(box);
  CHECK(*box == BoundingBox{1, 1, 2, 2});
  CHECK_FALSE(bbox_from_mask(ProbMap::filled(2, 2, 0.1f), 0.5));
  CHECK(to_encoder_space(0, 256, 1024) == doctest::Approx(2.0));
  CHECK(to_encoder_space(255, 256, 1024) == doctest::Approx(1022.0));
}

TEST_CASE("prompt assembly by mode") {
  SamplingConfig cfg;
  cfg.grid_size = 2;
  PromptGeometry geo{64, 16};
  ProbMap m = ProbMap::filled(8, 8, 0.9f);
  auto points = assemble_prompts(m, cfg, 0, geo);
  CHECK(points.points.size() == 4);
  CHECK_FALSE(points.bbox);
  auto box = assemble_prompts(m, cfg, 1, geo);
  CHECK(box.points.empty());
  REQUIRE(box.bbox);
  CHECK(*box.bbox == BoundingBox{0, 0, 7, 7});
  auto dense = assemble_prompts(m, cfg, 2, geo);
  REQUIRE(dense.dense_mask);
  CHECK(dense.dense_mask->height() == 16);
  CHECK_THROWS_AS(assemble_prompts(m, cfg, 3, geo), RequestError);
}
