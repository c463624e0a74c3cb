#pragma once

#include <torch/torch.h>

#include <filesystem>

namespace shadeadapt {

/// (3, H, W) float in [0, 1], RGB order.
torch::Tensor read_rgb(const std::filesystem::path& path);
/// (H, W) uint8 as stored; colour files are converted to luma.
torch::Tensor read_gray(const std::filesystem::path& path);

/// (H, W) uint8.
void write_gray_png(const std::filesystem::path& path, const torch::Tensor& gray);
/// (H, W, 3) uint8, RGB order.
void write_rgb_png(const std::filesystem::path& path, const torch::Tensor& rgb);

}  // namespace shadeadapt
