#include "shadeadapt/losses.hpp"

#include "shadeadapt/errors.hpp"

#include <cmath>
#include <sstream>

namespace shadeadapt {

void FocalParams::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0,1)");
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ConfigError("gamma must be >= 0");
}

torch::Tensor focal_loss(const torch::Tensor& pred, const torch::Tensor& target,
                         const FocalParams& params) {
  if (!pred.sizes().equals(target.sizes())) {
    std::ostringstream os;
    os << "focal loss shape mismatch: pred " << pred.sizes() << " vs target " << target.sizes();
    throw RequestError(os.str());
  }
  params.validate();
  torch::Tensor p = pred.clamp(kFocalEps, 1.0 - kFocalEps);
  torch::Tensor y = target.to(p.dtype());
  torch::Tensor pos = -params.alpha * torch::pow(1.0 - p, params.gamma) * torch::log(p);
  torch::Tensor neg = -(1.0 - params.alpha) * torch::pow(p, params.gamma) * torch::log(1.0 - p);
  torch::Tensor per_pixel = y * pos + (1.0 - y) * neg;
  if (per_pixel.dim() <= 1) return per_pixel.mean();
  return per_pixel.flatten(1).mean(1).mean();
}

BerCounts& BerCounts::operator+=(const BerCounts& o) {
  tp += o.tp;
  tn += o.tn;
  np += o.np;
  nn += o.nn;
  return *this;
}

BerReport ber_from_counts(const BerCounts& c) {
  if (c.tp < 0 || c.tn < 0 || c.tp > c.np || c.tn > c.nn) {
    throw RequestError("BER counts must satisfy 0 <= Tp <= Np and 0 <= Tn <= Nn");
  }
  if (c.np == 0 && c.nn == 0) throw RequestError("BER of an empty mask is undefined");
  BerReport r;
  r.counts = c;
  if (c.np > 0) r.ber_s = (1.0 - static_cast<double>(c.tp) / c.np) * 100.0;
  if (c.nn > 0) r.ber_ns = (1.0 - static_cast<double>(c.tn) / c.nn) * 100.0;
  if (r.ber_s && r.ber_ns) {
    r.ber = (1.0 - 0.5 * (static_cast<double>(c.tp) / c.np + static_cast<double>(c.tn) / c.nn)) *
            100.0;
  } else {
    r.ber = r.ber_s ? *r.ber_s : *r.ber_ns;
  }
  return r;
}

BerReport ber_compute(std::span<const uint8_t> pred, std::span<const uint8_t> gt) {
  if (pred.size() != gt.size()) throw RequestError("BER masks differ in size");
  BerCounts c;
  for (size_t i = 0; i < gt.size(); ++i) {
    if (pred[i] > 1 || gt[i] > 1) throw RequestError("BER masks must be strictly binary");
    if (gt[i]) {
      ++c.np;
      c.tp += pred[i];
    } else {
      ++c.nn;
      c.tn += 1 - pred[i];
    }
  }
  return ber_from_counts(c);
}

std::vector<uint8_t> binarize(std::span<const float> probs, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw RequestError("binarization threshold must lie in (0,1)");
  }
  std::vector<uint8_t> out(probs.size());
  for (size_t i = 0; i < probs.size(); ++i) {
    out[i] = static_cast<double>(probs[i]) >= threshold ? 1 : 0;
  }
  return out;
}

void BerAccumulator::add(const BerReport& r) {
  ++images_;
  if (r.degenerate()) ++degenerate_;
  ber_sum_ += r.ber;
  if (r.ber_s) {
    ber_s_sum_ += *r.ber_s;
    ++ber_s_n_;
  }
  if (r.ber_ns) {
    ber_ns_sum_ += *r.ber_ns;
    ++ber_ns_n_;
  }
  pooled_ += r.counts;
}

BerReport BerAccumulator::summary() const {
  if (images_ == 0) throw RequestError("no images were evaluated");
  if (mode_ == BerAggregation::PixelPooled) return ber_from_counts(pooled_);
  BerReport r;
  r.counts = pooled_;
  r.ber = ber_sum_ / images_;
  if (ber_s_n_ > 0) r.ber_s = ber_s_sum_ / ber_s_n_;
  if (ber_ns_n_ > 0) r.ber_ns = ber_ns_sum_ / ber_ns_n_;
  return r;
}

}  // namespace shadeadapt
