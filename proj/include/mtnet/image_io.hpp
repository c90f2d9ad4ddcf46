#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace mtnet {

/// Single-channel image, row-major, values in [0, 1].
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> pixels;

  double at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
};

/// Decodes any PNG (gray, RGB, palette, alpha, 16-bit) to 8-bit gray and
/// scales to [0, 1]. Throws DataError naming the file on decode failure.
GrayImage read_png_gray(const std::filesystem::path& path);

/// Writes an 8-bit grayscale PNG; values are clamped to [0, 1] and rounded
/// to the nearest of 256 levels.
void write_png_gray(const std::filesystem::path& path, const GrayImage& image);

/// Half-pixel-centre bilinear resampling. Same-size resizing is the identity.
GrayImage resize_bilinear(const GrayImage& src, std::size_t width, std::size_t height);

/// Nearest-neighbour resampling with the same pixel-centre convention.
GrayImage resize_nearest(const GrayImage& src, std::size_t width, std::size_t height);

}  // namespace mtnet
