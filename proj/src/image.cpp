#include "cyclead/image.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "cyclead/error.hpp"

namespace cyclead {

void validate_image(const Image& image) {
  if (image.height < 1 || image.width < 1) throw ShapeError("image must be at least 1x1");
  if (image.channels != 1 && image.channels != 3) {
    throw ShapeError("image must have 1 or 3 channels, got " + std::to_string(image.channels));
  }
  if (image.pixels.size() != static_cast<std::size_t>(image.height) * image.width * image.channels) {
    throw ShapeError("image pixel buffer does not match its extents");
  }
  for (float v : image.pixels) {
    if (!(v >= 0.0f && v <= 1.0f)) throw DataError("image intensity outside [0,1]");
  }
}

Tensor<float> to_model_tensor(std::span<const Image* const> images) {
  if (images.empty()) throw ShapeError("to_model_tensor of an empty batch");
  const Image& first = *images.front();
  Tensor<float> t(Shape{static_cast<int>(images.size()), first.channels, first.height, first.width});
  const std::size_t plane = static_cast<std::size_t>(first.height) * first.width;
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = *images[n];
    if (!img.same_extent(first)) throw ShapeError("batch images differ in extent");
    float* dst = t.sample(static_cast<int>(n));
    for (std::size_t p = 0; p < plane; ++p) {
      for (int c = 0; c < img.channels; ++c) {
        dst[c * plane + p] = img.pixels[p * img.channels + c] * 2.0f - 1.0f;
      }
    }
  }
  return t;
}

Tensor<float> to_model_tensor(const Image& image) {
  const Image* one[] = {&image};
  return to_model_tensor(std::span<const Image* const>(one));
}

Image from_model_tensor(const Tensor<float>& batch, int n) {
  const Shape s = batch.shape();
  Image img(s.h, s.w, s.c);
  const std::size_t plane = s.plane_size();
  const float* src = batch.sample(n);
  for (std::size_t p = 0; p < plane; ++p) {
    for (int c = 0; c < s.c; ++c) {
      img.pixels[p * s.c + c] = std::clamp((src[c * plane + p] + 1.0f) * 0.5f, 0.0f, 1.0f);
    }
  }
  return img;
}

Image read_image(const std::filesystem::path& path, bool grayscale) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) return {};
  double scale = 1.0;
  switch (raw.depth()) {
    case CV_8U:
      scale = 1.0 / 255.0;
      break;
    case CV_16U:
      scale = 1.0 / 65535.0;
      break;
    case CV_32F:
    case CV_64F:
      scale = 1.0;
      break;
    default:
      return {};
  }
  cv::Mat converted;
  const int ch = raw.channels();
  if (grayscale) {
    if (ch == 3) cv::cvtColor(raw, converted, cv::COLOR_BGR2GRAY);
    else if (ch == 4) cv::cvtColor(raw, converted, cv::COLOR_BGRA2GRAY);
    else converted = raw;
  } else {
    if (ch == 1) cv::cvtColor(raw, converted, cv::COLOR_GRAY2RGB);
    else if (ch == 4) cv::cvtColor(raw, converted, cv::COLOR_BGRA2RGB);
    else cv::cvtColor(raw, converted, cv::COLOR_BGR2RGB);
  }
  cv::Mat f;
  converted.convertTo(f, grayscale ? CV_32FC1 : CV_32FC3, scale);
  Image img(f.rows, f.cols, f.channels());
  for (int y = 0; y < f.rows; ++y) {
    const float* row = f.ptr<float>(y);
    std::copy(row, row + static_cast<std::size_t>(f.cols) * f.channels(),
              img.pixels.begin() + static_cast<std::ptrdiff_t>(y) * f.cols * f.channels());
  }
  for (auto& v : img.pixels) v = std::clamp(std::isfinite(v) ? v : 0.0f, 0.0f, 1.0f);
  return img;
}

void write_image(const std::filesystem::path& path, const Image& image) {
  validate_image(image);
  cv::Mat m(image.height, image.width, image.channels == 1 ? CV_8UC1 : CV_8UC3);
  for (int y = 0; y < image.height; ++y) {
    auto* row = m.ptr<unsigned char>(y);
    for (int x = 0; x < image.width * image.channels; ++x) {
      const float v = image.pixels[static_cast<std::size_t>(y) * image.width * image.channels + x];
      row[x] = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
    }
  }
  if (image.channels == 3) cv::cvtColor(m, m, cv::COLOR_RGB2BGR);
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m)) throw DataError("failed to write image " + path.string());
}

}  // namespace cyclead
