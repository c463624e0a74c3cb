#include "shadeadapt/synthetic.hpp"

#include "shadeadapt/errors.hpp"
#include "shadeadapt/image_io.hpp"

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

namespace shadeadapt {

void write_synthetic_dataset(const std::filesystem::path& root, const SyntheticSpec& spec) {
  if (spec.count < 1) throw RequestError("synthetic count must be positive");
  if (spec.size < 8) throw RequestError("synthetic image size must be at least 8");
  const int64_t s = spec.size;
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int64_t n = 0; n < spec.count; ++n) {
    double base[3], tilt[3];
    for (int c = 0; c < 3; ++c) {
      base[c] = 0.55 + 0.35 * u(rng);
      tilt[c] = 0.2 * (u(rng) - 0.5);
    }
    const int blobs = u(rng) < 0.5 ? 1 : 2;
    double cx[2], cy[2], rx[2], ry[2];
    for (int b = 0; b < blobs; ++b) {
      cx[b] = s * (0.25 + 0.5 * u(rng));
      cy[b] = s * (0.25 + 0.5 * u(rng));
      rx[b] = s * (0.12 + 0.15 * u(rng));
      ry[b] = s * (0.12 + 0.15 * u(rng));
    }
    const double darken = 0.3 + 0.15 * u(rng);

    torch::Tensor image = torch::empty({s, s, 3}, torch::kUInt8);
    torch::Tensor mask = torch::zeros({s, s}, torch::kUInt8);
    auto img = image.accessor<uint8_t, 3>();
    auto msk = mask.accessor<uint8_t, 2>();
    for (int64_t y = 0; y < s; ++y) {
      for (int64_t x = 0; x < s; ++x) {
        bool shadow = false;
        for (int b = 0; b < blobs; ++b) {
          const double dx = (x + 0.5 - cx[b]) / rx[b], dy = (y + 0.5 - cy[b]) / ry[b];
          shadow = shadow || dx * dx + dy * dy <= 1.0;
        }
        const double t = (x + y) / (2.0 * s) - 0.5;
        for (int c = 0; c < 3; ++c) {
          double v = base[c] + tilt[c] * t + 0.04 * (u(rng) - 0.5);
          if (shadow) v *= darken;
          img[y][x][c] = static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        }
        msk[y][x] = shadow ? 255 : 0;
      }
    }
    char name[32];
    std::snprintf(name, sizeof name, "%04lld.png", static_cast<long long>(n));
    write_rgb_png(root / "images" / name, image);
    write_gray_png(root / "masks" / name, mask);
  }
}

}  // namespace shadeadapt
