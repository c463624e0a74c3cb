#include "shadeadapt/image_io.hpp"

#include "shadeadapt/errors.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace shadeadapt {

namespace {

cv::Mat load(const std::filesystem::path& path, int flags) {
  if (!std::filesystem::exists(path)) {
    throw IoError("no such file: " + path.string());
  }
  cv::Mat m = cv::imread(path.string(), flags);
  if (m.empty()) throw IoError("cannot decode image: " + path.string());
  return m;
}

void ensure_parent(const std::filesystem::path& path) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
}

}  // namespace

torch::Tensor read_rgb(const std::filesystem::path& path) {
  cv::Mat bgr = load(path, cv::IMREAD_COLOR);
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  torch::Tensor t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8).clone();
  return t.permute({2, 0, 1}).to(torch::kFloat32).div_(255.0).contiguous();
}

torch::Tensor read_gray(const std::filesystem::path& path) {
  cv::Mat g = load(path, cv::IMREAD_GRAYSCALE);
  return torch::from_blob(g.data, {g.rows, g.cols}, torch::kUInt8).clone();
}

void write_gray_png(const std::filesystem::path& path, const torch::Tensor& gray) {
  torch::Tensor t = gray.to(torch::kUInt8).contiguous();
  if (t.dim() != 2) throw RequestError("grayscale image must be (H, W)");
  cv::Mat m(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), CV_8UC1, t.data_ptr());
  ensure_parent(path);
  if (!cv::imwrite(path.string(), m)) throw IoError("cannot write " + path.string());
}

void write_rgb_png(const std::filesystem::path& path, const torch::Tensor& rgb) {
  torch::Tensor t = rgb.to(torch::kUInt8).contiguous();
  if (t.dim() != 3 || t.size(2) != 3) throw RequestError("colour image must be (H, W, 3)");
  cv::Mat m(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), CV_8UC3, t.data_ptr());
  cv::Mat bgr;
  cv::cvtColor(m, bgr, cv::COLOR_RGB2BGR);
  ensure_parent(path);
  if (!cv::imwrite(path.string(), bgr)) throw IoError("cannot write " + path.string());
}

}  // namespace shadeadapt
