#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "cyclead/tensor.hpp"

namespace cyclead {

// Interleaved HWC image with intensities nominally in [0,1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {}

  std::size_t size() const { return pixels.size(); }
  float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool same_extent(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
  bool operator==(const Image&) const = default;
};

// Throws ShapeError/DataError when extents or intensities are invalid.
void validate_image(const Image& image);

// Stacks images into an NCHW tensor mapped from [0,1] to [-1,1].
Tensor<float> to_model_tensor(std::span<const Image* const> images);
Tensor<float> to_model_tensor(const Image& image);
// Sample n of an NCHW tensor in [-1,1], mapped back to a [0,1] image.
Image from_model_tensor(const Tensor<float>& batch, int n);

// Reads any format OpenCV decodes, rescaled to [0,1], RGB channel order.
// Returns an empty (0x0) image when the file cannot be decoded.
Image read_image(const std::filesystem::path& path, bool grayscale);
void write_image(const std::filesystem::path& path, const Image& image);

}  // namespace cyclead
