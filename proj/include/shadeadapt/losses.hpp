#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace shadeadapt {

struct FocalParams {
  double alpha = 8.0 / 9.0;
  double gamma = 2.0;

  void validate() const;
  bool operator==(const FocalParams&) const = default;
};

inline constexpr double kFocalEps = 1e-6;

/// Mean over pixels, then over the batch, of
///   -alpha (1-p)^gamma log p          for y = 1
///   -(1-alpha) p^gamma log(1-p)       for y = 0
/// with p clamped to [eps, 1-eps]. pred and target must have equal shape;
/// dim 0 is the batch (a 0-d or 1-d input counts as one sample).
torch::Tensor focal_loss(const torch::Tensor& pred, const torch::Tensor& target,
                         const FocalParams& params);

// ---------------------------------------------------------------------------
// Balanced error rate

struct BerCounts {
  int64_t tp = 0;  // shadow pixels predicted shadow
  int64_t tn = 0;  // non-shadow pixels predicted non-shadow
  int64_t np = 0;  // shadow pixels in the ground truth
  int64_t nn = 0;  // non-shadow pixels in the ground truth

  BerCounts& operator+=(const BerCounts& o);
  bool operator==(const BerCounts&) const = default;
};

struct BerReport {
  double ber = 0.0;
  /// Undefined when the image has no pixels of that class.
  std::optional<double> ber_s;
  std::optional<double> ber_ns;
  BerCounts counts;

  /// True when one class was absent and its term was dropped.
  bool degenerate() const { return !ber_s || !ber_ns; }
};

/// Report from raw counts. With one class missing, ber uses the other term
/// alone; with both missing (empty input) a RequestError is thrown.
BerReport ber_from_counts(const BerCounts& counts);

/// Both masks strictly binary (0/1) and equally sized.
BerReport ber_compute(std::span<const uint8_t> pred, std::span<const uint8_t> gt);

/// pixel >= threshold -> 1. threshold must lie in (0, 1).
std::vector<uint8_t> binarize(std::span<const float> probs, double threshold);

enum class BerAggregation { PerImage, PixelPooled };

/// Dataset-level BER. PerImage averages per-image values (ber_s / ber_ns
/// over the images where they are defined); PixelPooled sums counts first.
class BerAccumulator {
 public:
  explicit BerAccumulator(BerAggregation mode = BerAggregation::PerImage) : mode_(mode) {}

  void add(const BerReport& r);
  BerReport summary() const;
  int64_t images() const { return images_; }
  /// Images that lacked one class.
  int64_t degenerate_images() const { return degenerate_; }

 private:
  BerAggregation mode_;
  int64_t images_ = 0;
  int64_t degenerate_ = 0;
  double ber_sum_ = 0.0;
  double ber_s_sum_ = 0.0;
  int64_t ber_s_n_ = 0;
  double ber_ns_sum_ = 0.0;
  int64_t ber_ns_n_ = 0;
  BerCounts pooled_;
};

}  // namespace shadeadapt
