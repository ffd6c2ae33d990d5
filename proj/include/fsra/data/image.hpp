#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "fsra/tensor/tensor.hpp"

namespace fsra {

// RGB image, row-major HWC, values in [0,1].
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, float fill = 0.0f) : width(w), height(h), pixels(w * h * 3, fill) {}

  float& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
  float at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * 3 + c];
  }
  bool empty() const { return pixels.empty(); }
};

// Reads .png (8-bit, any color type converted to RGB) or .raw
// (u32 LE width, u32 LE height, then RGB bytes). Throws std::runtime_error.
Image read_image(const std::filesystem::path& path);

// Writes by extension; values are clamped and rounded to 8 bits.
void write_image(const std::filesystem::path& path, const Image& image);

// Single-channel 8-bit P2 (ASCII) graymap; values are scaled from [lo, hi].
void write_graymap(const std::filesystem::path& path, const std::vector<double>& values,
                   std::size_t width, std::size_t height, double lo, double hi);

// Bilinear, pixel-center aligned.
Image resize_bilinear(const Image& image, std::size_t width, std::size_t height);

// Content shifts right by `width` px with a black band on the left; size is kept.
// Throws std::invalid_argument unless 0 <= width < image width.
Image black_pad(const Image& image, std::size_t width);

// As black_pad, but the band is the mirrored leftmost `width` columns.
Image flip_pad(const Image& image, std::size_t width);

// Stacks images into [B,H,W,3], mapping [0,1] to [−1,1]. All images must
// share one size.
Tensor<float> images_to_tensor(const std::vector<const Image*>& images);

}  // namespace fsra
