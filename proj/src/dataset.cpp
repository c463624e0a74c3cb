#include "shadeadapt/dataset.hpp"

#include "shadeadapt/errors.hpp"
#include "shadeadapt/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <sstream>

namespace shadeadapt {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;

namespace {

const std::set<std::string> kProfiles = {"sbu", "ucf", "istd", "cuhk", "custom"};
const std::set<std::string> kSplits = {"train", "val", "test"};
const std::set<std::string> kImageExt = {".jpg", ".jpeg", ".png", ".bmp", ".tif", ".tiff"};

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::map<std::string, fs::path> index_dir(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    if (!kImageExt.count(lower(e.path().extension().string()))) continue;
    auto stem = e.path().stem().string();
    auto [it, fresh] = out.emplace(stem, e.path());
    if (!fresh) throw IngestError("duplicate stem '" + stem + "' in " + dir.string());
  }
  return out;
}

}  // namespace

void DatasetProfile::validate() const {
  if (!kProfiles.count(name)) {
    throw ConfigError("unknown dataset profile '" + name + "' (sbu, ucf, istd, cuhk, custom)");
  }
  if (!kSplits.count(split)) throw ConfigError("split must be one of train, val, test");
  if (epochs <= 0) throw ConfigError("epochs must be positive");
  focal.validate();
}

DatasetProfile DatasetProfile::defaults_for(const std::string& name) {
  DatasetProfile p;
  p.name = name;
  if (name == "cuhk") {
    p.focal.alpha = 0.7;
    p.epochs = 200;
  } else if (name == "istd") {
    p.epochs = 200;
  } else if (!kProfiles.count(name)) {
    throw ConfigError("unknown dataset profile '" + name + "' (sbu, ucf, istd, cuhk, custom)");
  }
  return p;
}

LayoutDirs dataset_layout(const DatasetProfile& profile) {
  const fs::path& r = profile.root;
  const std::string& s = profile.split;
  if (profile.name == "sbu") {
    fs::path base = r / (s == "train" ? "SBUTrain4KRecoveredSmall" : "SBU-Test");
    return {base / "ShadowImages", base / "ShadowMasks"};
  }
  if (profile.name == "ucf") {
    fs::path base = fs::exists(r / s) ? r / s : r;
    return {base / "InputImages", base / "GroundTruth"};
  }
  if (profile.name == "istd") {
    return {r / s / (s + "_A"), r / s / (s + "_B")};
  }
  if (profile.name == "cuhk") {
    return {r / s / "shadow_A", r / s / "shadow_B"};
  }
  fs::path base = fs::exists(r / s / "images") ? r / s : r;
  return {base / "images", base / "masks"};
}

Dataset::Dataset(std::vector<DatasetEntry> entries, std::vector<std::string> unmatched_masks)
    : entries_(std::move(entries)), unmatched_masks_(std::move(unmatched_masks)) {}

DatasetSample Dataset::sample(size_t i) const { return load_sample(entries_.at(i)); }

Dataset load_dataset(const DatasetProfile& profile) {
  profile.validate();
  if (!fs::is_directory(profile.root)) {
    throw IngestError("dataset root does not exist: " + profile.root.string());
  }
  LayoutDirs dirs = dataset_layout(profile);
  for (const auto& d : {dirs.images, dirs.masks}) {
    if (!fs::is_directory(d)) {
      throw IngestError("expected directory " + d.string() + " for profile '" + profile.name + "'");
    }
  }
  auto images = index_dir(dirs.images);
  auto masks = index_dir(dirs.masks);

  std::vector<DatasetEntry> entries;
  std::vector<std::string> missing;
  for (const auto& [stem, path] : images) {
    auto it = masks.find(stem);
    if (it == masks.end()) {
      missing.push_back(stem);
    } else {
      entries.push_back({stem, path, it->second});
    }
  }
  if (!missing.empty()) {
    std::ostringstream os;
    os << missing.size() << " image(s) without a mask in " << dirs.masks.string() << ":";
    for (const auto& m : missing) os << ' ' << m;
    throw IngestError(os.str());
  }
  if (entries.empty()) throw IngestError("dataset is empty: " + dirs.images.string());
  std::vector<std::string> unmatched;
  for (const auto& [stem, path] : masks) {
    if (!images.count(stem)) unmatched.push_back(stem);
  }
  return Dataset(std::move(entries), std::move(unmatched));
}

DatasetSample load_sample(const DatasetEntry& entry) {
  DatasetSample s;
  s.id = entry.id;
  s.image = read_rgb(entry.image_path);
  torch::Tensor raw = read_gray(entry.mask_path);
  if (raw.size(0) != s.image.size(1) || raw.size(1) != s.image.size(2)) {
    std::ostringstream os;
    os << "mask " << entry.mask_path.string() << " is " << raw.size(1) << "x" << raw.size(0)
       << " but its image is " << s.image.size(2) << "x" << s.image.size(1);
    throw IngestError(os.str());
  }
  s.gt_mask = raw.ge(128).to(torch::kUInt8);
  s.original_size = {s.image.size(1), s.image.size(2)};
  return s;
}

void AugmentConfig::validate() const {
  if (!(crop_min > 0.0 && crop_min <= crop_max && crop_max <= 1.0)) {
    throw ConfigError("crop scale range must satisfy 0 < crop_min <= crop_max <= 1");
  }
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw ConfigError("flip_prob must lie in [0,1]");
}

AugmentDraw draw_augmentation(uint64_t seed, int64_t height, int64_t width,
                              const AugmentConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  AugmentDraw d;
  double scale = cfg.crop_min + (cfg.crop_max - cfg.crop_min) * unit(rng);
  d.crop_h = std::clamp<int64_t>(std::llround(scale * height), 1, height);
  d.crop_w = std::clamp<int64_t>(std::llround(scale * width), 1, width);
  d.top = std::uniform_int_distribution<int64_t>(0, height - d.crop_h)(rng);
  d.left = std::uniform_int_distribution<int64_t>(0, width - d.crop_w)(rng);
  d.flip = unit(rng) < cfg.flip_prob;
  return d;
}

DatasetSample augment(const DatasetSample& sample, uint64_t seed, const AugmentConfig& cfg) {
  const int64_t h = sample.image.size(1), w = sample.image.size(2);
  AugmentDraw d = draw_augmentation(seed, h, w, cfg);
  DatasetSample out = sample;
  out.image = sample.image.narrow(1, d.top, d.crop_h).narrow(2, d.left, d.crop_w);
  out.gt_mask = sample.gt_mask.narrow(0, d.top, d.crop_h).narrow(1, d.left, d.crop_w);
  if (d.flip) {
    out.image = out.image.flip({2});
    out.gt_mask = out.gt_mask.flip({1});
  }
  out.image = out.image.contiguous();
  out.gt_mask = out.gt_mask.contiguous();
  out.original_size = {d.crop_h, d.crop_w};
  return out;
}

torch::Tensor prepare_image(const torch::Tensor& image, const NormalizeSpec& spec) {
  if (image.dim() != 3 || image.size(0) != 3) throw RequestError("image must be (3, H, W)");
  torch::Tensor x = image.to(torch::kFloat32).unsqueeze(0);
  if (x.size(2) != spec.input_size || x.size(3) != spec.input_size) {
    x = F::interpolate(x, F::InterpolateFuncOptions()
                              .size(std::vector<int64_t>{spec.input_size, spec.input_size})
                              .mode(torch::kBilinear)
                              .align_corners(false));
  }
  auto mean = torch::tensor({spec.mean[0], spec.mean[1], spec.mean[2]}, torch::kFloat32);
  auto std = torch::tensor({spec.std[0], spec.std[1], spec.std[2]}, torch::kFloat32);
  return ((x.squeeze(0) - mean.view({3, 1, 1})) / std.view({3, 1, 1})).contiguous();
}

torch::Tensor resize_mask_nearest(const torch::Tensor& mask, int64_t height, int64_t width) {
  if (mask.dim() < 2) throw RequestError("mask must be at least (H, W)");
  const int64_t h = mask.size(-2), w = mask.size(-1);
  if (h == height && w == width) return mask.clone();
  // Source pixel whose center is nearest: floor((i + 0.5) * in / out).
  auto indices = [](int64_t in, int64_t out) {
    return torch::arange(out, torch::kFloat64).add(0.5).mul(static_cast<double>(in) / out)
        .floor()
        .clamp_max(in - 1)
        .to(torch::kLong);
  };
  return mask.index_select(-2, indices(h, height)).index_select(-1, indices(w, width)).contiguous();
}

ModelInput resize_normalize(const DatasetSample& sample, const NormalizeSpec& spec) {
  ModelInput in;
  in.id = sample.id;
  in.original_size = {sample.image.size(1), sample.image.size(2)};
  in.image = prepare_image(sample.image, spec);
  in.mask = resize_mask_nearest(sample.gt_mask, spec.mask_size, spec.mask_size).to(torch::kFloat32);
  return in;
}

}  // namespace shadeadapt
