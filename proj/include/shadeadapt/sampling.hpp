#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace shadeadapt {

/// Row-major probability map with values in [0, 1]; the coarse shadow
/// mask once it leaves the network.
class ProbMap {
 public:
  ProbMap() = default;
  /// Throws RequestError on size mismatch or values outside [0, 1].
  ProbMap(int64_t height, int64_t width, std::vector<float> values);
  static ProbMap filled(int64_t height, int64_t width, float value);

  int64_t height() const { return height_; }
  int64_t width() const { return width_; }
  int64_t size() const { return height_ * width_; }
  float at(int64_t y, int64_t x) const { return values_[static_cast<size_t>(y * width_ + x)]; }
  std::span<const float> values() const { return values_; }

  /// Bilinear resample (half-pixel centers, edge clamped).
  ProbMap resized(int64_t height, int64_t width) const;

  bool operator==(const ProbMap&) const = default;

 private:
  int64_t height_ = 0;
  int64_t width_ = 0;
  std::vector<float> values_;
};

struct PointPrompt {
  int64_t x = 0;  // column in coarse-mask coordinates
  int64_t y = 0;  // row
  int label = 0;  // 1 shadow, 0 background
  float score = 0.0f;

  bool operator==(const PointPrompt&) const = default;
};

struct BoundingBox {
  int64_t x_min = 0, y_min = 0, x_max = 0, y_max = 0;
  bool operator==(const BoundingBox&) const = default;
};

enum class SamplingStrategy { TopK, Grid };

const char* strategy_name(SamplingStrategy s);
SamplingStrategy parse_strategy(const std::string& s);

struct SamplingConfig {
  SamplingStrategy strategy = SamplingStrategy::Grid;
  int64_t k = 1;           // points per grid block
  int64_t grid_size = 16;  // g
  double tau = 0.5;
  int64_t n_pos = 8;       // top-k mode
  int64_t n_neg = 8;

  /// Throws ConfigError naming the offending key.
  void validate() const;
  bool operator==(const SamplingConfig&) const = default;
};

/// n_pos highest pixels labelled 1 (descending), then n_neg lowest labelled
/// 0 (ascending). Ties go to the smaller row-major index.
std::vector<PointPrompt> topk_sample(const ProbMap& mask, int64_t n_pos, int64_t n_neg);

/// Row boundaries of the g-way split of `extent` pixels: block i covers
/// [ceil(i*extent/g), ceil((i+1)*extent/g)). Block sizes differ by at most
/// one and none is empty.
std::vector<int64_t> block_bounds(int64_t extent, int64_t g);

/// g x g blocks in row-major block order; per block the k highest pixels
/// (descending, row-major tie-break), each labelled [score >= tau].
std::vector<PointPrompt> grid_sample(const ProbMap& mask, int64_t g, int64_t k, double tau);

/// Tight box over pixels >= tau; nullopt when there are none.
std::optional<BoundingBox> bbox_from_mask(const ProbMap& mask, double tau);

/// Prompt kinds; the numeric values are the mode indices j.
enum class PromptKind : int { Point = 0, Box = 1, Mask = 2 };

struct PromptGeometry {
  int64_t input_size = 1024;  // encoder input side
  int64_t dense_size = 256;   // dense-mask prompt side (input / 4)
};

struct PromptSet {
  std::vector<PointPrompt> points;
  std::optional<BoundingBox> bbox;
  std::optional<ProbMap> dense_mask;
  /// Coarse-mask extent the points and box refer to.
  int64_t source_height = 0;
  int64_t source_width = 0;
};

/// Encoder-space coordinate of a coarse-mask pixel center:
/// (index + 0.5) * input_size / extent.
double to_encoder_space(int64_t index, int64_t extent, int64_t input_size);

/// Single mode j in {0, 1, 2}; throws RequestError otherwise.
PromptSet assemble_prompts(const ProbMap& mask, const SamplingConfig& cfg, int mode,
                           const PromptGeometry& geometry);
/// Union of several modes; used when combined prompts are configured.
PromptSet assemble_prompts(const ProbMap& mask, const SamplingConfig& cfg,
                           std::span<const PromptKind> kinds, const PromptGeometry& geometry);

}  // namespace shadeadapt
