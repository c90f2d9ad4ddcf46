#include "mtnet/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "mtnet/error.hpp"

namespace mtnet {

GrayImage read_png_gray(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw DataError("cannot decode image " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_GRAY;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw DataError("cannot decode image " + path.string() + ": " + msg);
  }
  GrayImage out;
  out.width = image.width;
  out.height = image.height;
  out.pixels.resize(buffer.size());
  for (std::size_t i = 0; i < buffer.size(); ++i) out.pixels[i] = buffer[i] / 255.0;
  return out;
}

void write_png_gray(const std::filesystem::path& path, const GrayImage& src) {
  std::vector<png_byte> buffer(src.pixels.size());
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    buffer[i] = static_cast<png_byte>(std::lround(std::clamp(src.pixels[i], 0.0, 1.0) * 255.0));
  }
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(src.width);
  image.height = static_cast<png_uint_32>(src.height);
  image.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, buffer.data(), 0, nullptr)) {
    throw IoError("cannot write image " + path.string() + ": " + image.message);
  }
}

namespace {

// Source coordinate of destination pixel centre `d` when scaling n_src -> n_dst.
double source_coord(std::size_t d, std::size_t n_src, std::size_t n_dst) {
  return (static_cast<double>(d) + 0.5) * static_cast<double>(n_src) / static_cast<double>(n_dst) - 0.5;
}

}  // namespace

GrayImage resize_bilinear(const GrayImage& src, std::size_t width, std::size_t height) {
  if (src.width == width && src.height == height) return src;
  GrayImage out{width, height, std::vector<double>(width * height)};
  for (std::size_t y = 0; y < height; ++y) {
    const double sy = std::clamp(source_coord(y, src.height, height), 0.0, static_cast<double>(src.height - 1));
    const std::size_t y0 = static_cast<std::size_t>(std::floor(sy));
    const std::size_t y1 = std::min(y0 + 1, src.height - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double sx = std::clamp(source_coord(x, src.width, width), 0.0, static_cast<double>(src.width - 1));
      const std::size_t x0 = static_cast<std::size_t>(std::floor(sx));
      const std::size_t x1 = std::min(x0 + 1, src.width - 1);
      const double fx = sx - static_cast<double>(x0);
      // a + (b - a) * f keeps constant regions exactly constant
      const double top = src.at(y0, x0) + (src.at(y0, x1) - src.at(y0, x0)) * fx;
      const double bottom = src.at(y1, x0) + (src.at(y1, x1) - src.at(y1, x0)) * fx;
      out.pixels[y * width + x] = top + (bottom - top) * fy;
    }
  }
  return out;
}

GrayImage resize_nearest(const GrayImage& src, std::size_t width, std::size_t height) {
  if (src.width == width && src.height == height) return src;
  GrayImage out{width, height, std::vector<double>(width * height)};
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t sy = std::min(src.height - 1, (2 * y + 1) * src.height / (2 * height));
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t sx = std::min(src.width - 1, (2 * x + 1) * src.width / (2 * width));
      out.pixels[y * width + x] = src.at(sy, sx);
    }
  }
  return out;
}

}  // namespace mtnet
