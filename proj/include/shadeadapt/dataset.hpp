#pragma once

#include "shadeadapt/losses.hpp"

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace shadeadapt {

/// Known dataset layouts (see README for the directory conventions).
struct DatasetProfile {
  std::string name = "custom";  // sbu, ucf, istd, cuhk, custom
  std::filesystem::path root;
  std::string split = "train";  // train, val, test
  FocalParams focal;
  int64_t epochs = 40;

  void validate() const;
  /// Per-dataset focal parameters and epoch budget.
  static DatasetProfile defaults_for(const std::string& name);
};

struct DatasetSample {
  torch::Tensor image;    // (3, H, W) float in [0, 1]
  torch::Tensor gt_mask;  // (H, W) uint8 in {0, 1}
  std::string id;
  std::array<int64_t, 2> original_size{0, 0};  // (H, W)
};

struct DatasetEntry {
  std::string id;
  std::filesystem::path image_path;
  std::filesystem::path mask_path;
};

/// Paired file index, ordered by id. Samples are decoded on access.
class Dataset {
 public:
  Dataset(std::vector<DatasetEntry> entries, std::vector<std::string> unmatched_masks);

  size_t size() const { return entries_.size(); }
  const DatasetEntry& entry(size_t i) const { return entries_.at(i); }
  const std::vector<DatasetEntry>& entries() const { return entries_; }
  /// Mask files with no matching image; reported, not fatal.
  const std::vector<std::string>& unmatched_masks() const { return unmatched_masks_; }

  DatasetSample sample(size_t i) const;

 private:
  std::vector<DatasetEntry> entries_;
  std::vector<std::string> unmatched_masks_;
};

struct LayoutDirs {
  std::filesystem::path images;
  std::filesystem::path masks;
};

/// Image and mask directories for a profile.
LayoutDirs dataset_layout(const DatasetProfile& profile);

/// Throws IngestError when an image has no mask (listing the stems) or the
/// dataset is empty.
Dataset load_dataset(const DatasetProfile& profile);

/// Decodes one pair; the mask is binarized at 128/255.
DatasetSample load_sample(const DatasetEntry& entry);

struct AugmentConfig {
  double crop_min = 0.75;  // fraction of each side kept by the random crop
  double crop_max = 1.0;
  double flip_prob = 0.5;

  void validate() const;
  bool operator==(const AugmentConfig&) const = default;
};

struct AugmentDraw {
  bool flip = false;
  int64_t crop_h = 0, crop_w = 0, top = 0, left = 0;
};

/// The random choices augment() makes for a given seed and image size.
AugmentDraw draw_augmentation(uint64_t seed, int64_t height, int64_t width,
                              const AugmentConfig& cfg);

/// Random crop then horizontal flip, applied identically to image and mask.
DatasetSample augment(const DatasetSample& sample, uint64_t seed, const AugmentConfig& cfg = {});

struct ModelInput {
  torch::Tensor image;  // (3, S, S) normalized
  torch::Tensor mask;   // (M, M) float in {0, 1} at the supervision size
  std::string id;
  std::array<int64_t, 2> original_size{0, 0};
};

struct NormalizeSpec {
  int64_t input_size = 1024;
  int64_t mask_size = 1024;
  std::array<double, 3> mean{0.5, 0.5, 0.5};
  std::array<double, 3> std{0.5, 0.5, 0.5};
};

/// Bilinear image resize + normalization; nearest mask resize.
ModelInput resize_normalize(const DatasetSample& sample, const NormalizeSpec& spec);

/// Normalized (3, S, S) tensor for a raw (3, H, W) image.
torch::Tensor prepare_image(const torch::Tensor& image, const NormalizeSpec& spec);

/// Nearest-neighbour resize over the last two dims of a (..., H, W) mask.
torch::Tensor resize_mask_nearest(const torch::Tensor& mask, int64_t height, int64_t width);

}  // namespace shadeadapt
