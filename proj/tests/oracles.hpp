#pragma once

// Slow reference implementations. None of these call into the library's
// numeric kernels; they only share its value types.

#include "shadeadapt/adapter.hpp"
#include "shadeadapt/losses.hpp"
#include "shadeadapt/sampling.hpp"

#include <cmath>
#include <cstdint>
#include <ostream>
#include <random>
#include <vector>

namespace shadeadapt {

inline std::ostream& operator<<(std::ostream& os, const PointPrompt& p) {
  return os << "(" << p.x << "," << p.y << " l" << p.label << " s" << p.score << ")";
}

inline std::ostream& operator<<(std::ostream& os, const BoundingBox& b) {
  return os << "[" << b.x_min << "," << b.y_min << "," << b.x_max << "," << b.y_max << "]";
}

}  // namespace shadeadapt

namespace oracle {

using shadeadapt::PointPrompt;
using shadeadapt::ProbMap;

// Values drawn from a small set so ties are common.
inline ProbMap random_mask(std::mt19937_64& rng, int64_t h, int64_t w) {
  std::uniform_int_distribution<int> level(0, 20);
  std::vector<float> v(static_cast<size_t>(h * w));
  for (auto& x : v) x = static_cast<float>(level(rng)) / 20.0f;
  return ProbMap(h, w, std::move(v));
}

// Repeated linear scans: each pick is the best pixel not yet taken.
inline int64_t pick(const ProbMap& m, const std::vector<bool>& taken,
                    const std::vector<bool>& allowed, bool highest) {
  int64_t best = -1;
  for (int64_t i = 0; i < m.size(); ++i) {
    if (taken[i] || !allowed[i]) continue;
    float v = m.values()[i];
    if (best < 0) {
      best = i;
      continue;
    }
    float b = m.values()[best];
    if (highest ? v > b : v < b) best = i;
  }
  return best;
}

inline std::vector<PointPrompt> topk(const ProbMap& m, int64_t n_pos, int64_t n_neg) {
  std::vector<bool> taken(m.size(), false), all(m.size(), true);
  std::vector<PointPrompt> out;
  auto emit = [&](int64_t i, int label) {
    taken[i] = true;
    out.push_back({i % m.width(), i / m.width(), label, m.values()[i]});
  };
  for (int64_t n = 0; n < n_pos; ++n) emit(pick(m, taken, all, true), 1);
  for (int64_t n = 0; n < n_neg; ++n) emit(pick(m, taken, all, false), 0);
  return out;
}

// Pixel y sits in block floor(y * g / H).
inline std::vector<PointPrompt> grid(const ProbMap& m, int64_t g, int64_t k, double tau) {
  std::vector<PointPrompt> out;
  std::vector<bool> taken(m.size(), false);
  for (int64_t by = 0; by < g; ++by) {
    for (int64_t bx = 0; bx < g; ++bx) {
      std::vector<bool> in(m.size(), false);
      for (int64_t i = 0; i < m.size(); ++i) {
        int64_t y = i / m.width(), x = i % m.width();
        in[i] = y * g / m.height() == by && x * g / m.width() == bx;
      }
      for (int64_t n = 0; n < k; ++n) {
        int64_t i = pick(m, taken, in, true);
        taken[i] = true;
        float s = m.values()[i];
        out.push_back({i % m.width(), i / m.width(), static_cast<double>(s) >= tau ? 1 : 0, s});
      }
    }
  }
  return out;
}

inline double ber(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt) {
  double tp = 0, tn = 0, np = 0, nn = 0;
  for (size_t i = 0; i < gt.size(); ++i) {
    if (gt[i]) {
      np += 1;
      if (pred[i]) tp += 1;
    } else {
      nn += 1;
      if (!pred[i]) tn += 1;
    }
  }
  return 100.0 * (1.0 - 0.5 * (tp / np + tn / nn));
}

inline double focal_pixel(double p, double y, double alpha, double gamma) {
  p = std::min(std::max(p, 1e-6), 1.0 - 1e-6);
  return y > 0.5 ? -alpha * std::pow(1.0 - p, gamma) * std::log(p)
                 : -(1.0 - alpha) * std::pow(p, gamma) * std::log(1.0 - p);
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

// up(GELU(down(x))) with explicit loops over a (B, N, C) tensor.
inline torch::Tensor adapter(shadeadapt::AdapterImpl& a, const torch::Tensor& x) {
  auto xd = x.to(torch::kFloat64).contiguous();
  auto wd = a.down->weight.detach().to(torch::kFloat64).contiguous();
  auto bd = a.down->bias.detach().to(torch::kFloat64).contiguous();
  auto wu = a.up->weight.detach().to(torch::kFloat64).contiguous();
  auto bu = a.up->bias.detach().to(torch::kFloat64).contiguous();
  const int64_t B = x.size(0), N = x.size(1), C = x.size(2), H = wd.size(0);
  auto out = torch::zeros({B, N, C}, torch::kFloat64);
  auto X = xd.accessor<double, 3>();
  auto O = out.accessor<double, 3>();
  auto Wd = wd.accessor<double, 2>();
  auto Bd = bd.accessor<double, 1>();
  auto Wu = wu.accessor<double, 2>();
  auto Bu = bu.accessor<double, 1>();
  std::vector<double> hid(static_cast<size_t>(H));
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t n = 0; n < N; ++n) {
      for (int64_t j = 0; j < H; ++j) {
        double s = Bd[j];
        for (int64_t c = 0; c < C; ++c) s += Wd[j][c] * X[b][n][c];
        hid[j] = gelu(s);
      }
      for (int64_t c = 0; c < C; ++c) {
        double s = Bu[c];
        for (int64_t j = 0; j < H; ++j) s += Wu[c][j] * hid[j];
        O[b][n][c] = s;
      }
    }
  }
  return out;
}

}  // namespace oracle
