#include "shadeadapt/sampling.hpp"

#include "shadeadapt/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace shadeadapt {

ProbMap::ProbMap(int64_t height, int64_t width, std::vector<float> values)
    : height_(height), width_(width), values_(std::move(values)) {
  if (height_ <= 0 || width_ <= 0) {
    throw RequestError("probability map must have positive extent");
  }
  if (static_cast<int64_t>(values_.size()) != height_ * width_) {
    throw RequestError("probability map value count does not match its extent");
  }
  for (float v : values_) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw RequestError("probability map values must lie in [0,1]");
    }
  }
}

ProbMap ProbMap::filled(int64_t height, int64_t width, float value) {
  return ProbMap(height, width, std::vector<float>(static_cast<size_t>(height * width), value));
}

ProbMap ProbMap::resized(int64_t height, int64_t width) const {
  if (height == height_ && width == width_) return *this;
  std::vector<float> out(static_cast<size_t>(height * width));
  const double sy = static_cast<double>(height_) / height;
  const double sx = static_cast<double>(width_) / width;
  for (int64_t y = 0; y < height; ++y) {
    const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
    const int64_t y0 = std::min<int64_t>(static_cast<int64_t>(fy), height_ - 1);
    const int64_t y1 = std::min<int64_t>(y0 + 1, height_ - 1);
    const double wy = fy - y0;
    for (int64_t x = 0; x < width; ++x) {
      const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
      const int64_t x0 = std::min<int64_t>(static_cast<int64_t>(fx), width_ - 1);
      const int64_t x1 = std::min<int64_t>(x0 + 1, width_ - 1);
      const double wx = fx - x0;
      const double v = (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x1)) +
                       wy * ((1 - wx) * at(y1, x0) + wx * at(y1, x1));
      out[static_cast<size_t>(y * width + x)] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return ProbMap(height, width, std::move(out));
}

const char* strategy_name(SamplingStrategy s) {
  return s == SamplingStrategy::TopK ? "topk" : "grid";
}

SamplingStrategy parse_strategy(const std::string& s) {
  if (s == "topk") return SamplingStrategy::TopK;
  if (s == "grid") return SamplingStrategy::Grid;
  throw ConfigError("strategy must be 'topk' or 'grid', got '" + s + "'");
}

void SamplingConfig::validate() const {
  if (k < 1) throw ConfigError("k must be a positive integer");
  if (grid_size < 1) throw ConfigError("grid_size must be a positive integer");
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("tau must lie in (0,1)");
  if (n_pos < 0 || n_neg < 0) throw ConfigError("n_pos and n_neg must be non-negative");
  if (strategy == SamplingStrategy::TopK && n_pos + n_neg < 1) {
    throw ConfigError("n_pos + n_neg must be at least 1 for top-k sampling");
  }
}

namespace {

PointPrompt make_point(const ProbMap& mask, int64_t idx, int label) {
  const int64_t y = idx / mask.width();
  const int64_t x = idx % mask.width();
  return {x, y, label, mask.at(y, x)};
}

}  // namespace

std::vector<PointPrompt> topk_sample(const ProbMap& mask, int64_t n_pos, int64_t n_neg) {
  if (n_pos < 0 || n_neg < 0 || n_pos + n_neg < 1) {
    throw RequestError("top-k sampling needs n_pos, n_neg >= 0 and n_pos + n_neg >= 1");
  }
  const int64_t n = mask.size();
  if (n_pos + n_neg > n) {
    std::ostringstream os;
    os << "requested " << n_pos + n_neg << " points from a mask of " << n << " pixels";
    throw RequestError(os.str());
  }
  auto v = mask.values();
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), int64_t{0});

  std::partial_sort(order.begin(), order.begin() + n_pos, order.end(), [&](int64_t a, int64_t b) {
    return v[a] != v[b] ? v[a] > v[b] : a < b;
  });
  std::vector<PointPrompt> out;
  out.reserve(static_cast<size_t>(n_pos + n_neg));
  for (int64_t i = 0; i < n_pos; ++i) out.push_back(make_point(mask, order[i], 1));

  // Negatives come from the pixels not already taken as positives.
  auto rest = std::span(order).subspan(static_cast<size_t>(n_pos));
  std::partial_sort(rest.begin(), rest.begin() + n_neg, rest.end(), [&](int64_t a, int64_t b) {
    return v[a] != v[b] ? v[a] < v[b] : a < b;
  });
  for (int64_t i = 0; i < n_neg; ++i) out.push_back(make_point(mask, rest[i], 0));
  return out;
}

std::vector<int64_t> block_bounds(int64_t extent, int64_t g) {
  std::vector<int64_t> b(static_cast<size_t>(g + 1));
  for (int64_t i = 0; i <= g; ++i) b[i] = (i * extent + g - 1) / g;
  return b;
}

std::vector<PointPrompt> grid_sample(const ProbMap& mask, int64_t g, int64_t k, double tau) {
  const int64_t h = mask.height(), w = mask.width();
  if (g < 1 || k < 1) throw RequestError("grid sampling needs g >= 1 and k >= 1");
  if (g > std::min(h, w)) {
    std::ostringstream os;
    os << "grid size " << g << " exceeds the mask extent " << h << "x" << w;
    throw RequestError(os.str());
  }
  if (!(tau > 0.0 && tau < 1.0)) throw RequestError("tau must lie in (0,1)");
  const auto rows = block_bounds(h, g);
  const auto cols = block_bounds(w, g);
  int64_t min_rows = h, min_cols = w;
  for (int64_t i = 0; i < g; ++i) {
    min_rows = std::min(min_rows, rows[i + 1] - rows[i]);
    min_cols = std::min(min_cols, cols[i + 1] - cols[i]);
  }
  if (k > min_rows * min_cols) {
    std::ostringstream os;
    os << "k = " << k << " exceeds the " << min_rows * min_cols
       << " pixels of the smallest grid block";
    throw RequestError(os.str());
  }

  auto v = mask.values();
  auto better = [&](int64_t a, int64_t b) { return v[a] != v[b] ? v[a] > v[b] : a < b; };
  std::vector<PointPrompt> out;
  out.reserve(static_cast<size_t>(g * g * k));
  std::vector<int64_t> block;
  for (int64_t by = 0; by < g; ++by) {
    for (int64_t bx = 0; bx < g; ++bx) {
      block.clear();
      for (int64_t y = rows[by]; y < rows[by + 1]; ++y) {
        for (int64_t x = cols[bx]; x < cols[bx + 1]; ++x) block.push_back(y * w + x);
      }
      std::partial_sort(block.begin(), block.begin() + k, block.end(), better);
      for (int64_t i = 0; i < k; ++i) {
        PointPrompt p = make_point(mask, block[i], 0);
        p.label = static_cast<double>(p.score) >= tau ? 1 : 0;
        out.push_back(p);
      }
    }
  }
  return out;
}

std::optional<BoundingBox> bbox_from_mask(const ProbMap& mask, double tau) {
  std::optional<BoundingBox> box;
  for (int64_t y = 0; y < mask.height(); ++y) {
    for (int64_t x = 0; x < mask.width(); ++x) {
      if (static_cast<double>(mask.at(y, x)) < tau) continue;
      if (!box) {
        box = BoundingBox{x, y, x, y};
      } else {
        box->x_min = std::min(box->x_min, x);
        box->x_max = std::max(box->x_max, x);
        box->y_max = y;
      }
    }
  }
  return box;
}

double to_encoder_space(int64_t index, int64_t extent, int64_t input_size) {
  return (static_cast<double>(index) + 0.5) * static_cast<double>(input_size) /
         static_cast<double>(extent);
}

PromptSet assemble_prompts(const ProbMap& mask, const SamplingConfig& cfg,
                           std::span<const PromptKind> kinds, const PromptGeometry& geometry) {
  cfg.validate();
  PromptSet set;
  set.source_height = mask.height();
  set.source_width = mask.width();
  for (PromptKind kind : kinds) {
    switch (kind) {
      case PromptKind::Point:
        set.points = cfg.strategy == SamplingStrategy::TopK
                         ? topk_sample(mask, cfg.n_pos, cfg.n_neg)
                         : grid_sample(mask, cfg.grid_size, cfg.k, cfg.tau);
        break;
      case PromptKind::Box:
        set.bbox = bbox_from_mask(mask, cfg.tau);
        break;
      case PromptKind::Mask:
        set.dense_mask = mask.resized(geometry.dense_size, geometry.dense_size);
        break;
    }
  }
  return set;
}

PromptSet assemble_prompts(const ProbMap& mask, const SamplingConfig& cfg, int mode,
                           const PromptGeometry& geometry) {
  if (mode < 0 || mode > 2) {
    throw RequestError("prompt mode must be 0 (points), 1 (box) or 2 (mask), got " +
                       std::to_string(mode));
  }
  const PromptKind kind = static_cast<PromptKind>(mode);
  return assemble_prompts(mask, cfg, std::span<const PromptKind>(&kind, 1), geometry);
}

}  // namespace shadeadapt
