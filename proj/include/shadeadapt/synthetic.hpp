#pragma once

#include <cstdint>
#include <filesystem>

namespace shadeadapt {

struct SyntheticSpec {
  int64_t count = 8;
  int64_t size = 64;
  uint64_t seed = 0;
};

/// Writes `count` image/mask pairs into root/images and root/masks: a
/// smooth coloured background with one or two darkened ellipses whose
/// footprint is the mask. Output depends only on the spec.
void write_synthetic_dataset(const std::filesystem::path& root, const SyntheticSpec& spec);

}  // namespace shadeadapt
