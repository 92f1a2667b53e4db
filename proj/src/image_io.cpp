#include "frinet/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace frinet::core {

namespace {

[[noreturn]] void png_fail(const std::string& path, const png_image& image) {
  throw std::runtime_error("png: " + path + ": " + image.message);
}

}  // namespace

RgbImage read_png_rgb(const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) png_fail(path, image);
  image.format = PNG_FORMAT_RGB;
  RgbImage out;
  out.width = static_cast<int>(image.width);
  out.height = static_cast<int>(image.height);
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    png_fail(path, image);
  }
  return out;
}

GrayImage read_png_gray(const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) png_fail(path, image);
  image.format = PNG_FORMAT_GRAY;
  GrayImage out;
  out.width = static_cast<int>(image.width);
  out.height = static_cast<int>(image.height);
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    png_fail(path, image);
  }
  return out;
}

void write_png(const std::string& path, const RgbImage& img) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0, nullptr))
    png_fail(path, image);
}

void write_png(const std::string& path, const GrayImage& img) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0, nullptr))
    png_fail(path, image);
}

Tensor<float> to_float_chw(const RgbImage& image) {
  Tensor<float> out({3, image.height, image.width});
  const long plane = static_cast<long>(image.height) * image.width;
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      const long i = static_cast<long>(y) * image.width + x;
      for (int c = 0; c < 3; ++c)
        out[c * plane + i] = static_cast<float>(image.at(y, x, c)) / 255.0f;
    }
  return out;
}

RgbImage to_rgb8(const Tensor<float>& chw) {
  if (chw.rank() != 3 || chw.size(0) != 3)
    throw std::invalid_argument("to_rgb8: expected 3 x H x W");
  RgbImage out;
  out.height = chw.size(1);
  out.width = chw.size(2);
  out.pixels.resize(static_cast<size_t>(out.width) * out.height * 3);
  const long plane = static_cast<long>(out.height) * out.width;
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) {
      const long i = static_cast<long>(y) * out.width + x;
      for (int c = 0; c < 3; ++c) {
        const float v = chw[c * plane + i];
        const int q = static_cast<int>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
        out.at(y, x, c) = static_cast<uint8_t>(q);
      }
    }
  return out;
}

Tensor<uint8_t> to_label_grid(const GrayImage& image) {
  Tensor<uint8_t> out({image.height, image.width});
  std::memcpy(out.data(), image.pixels.data(), image.pixels.size());
  return out;
}

GrayImage from_label_grid(const Tensor<uint8_t>& grid) {
  if (grid.rank() != 2) throw std::invalid_argument("from_label_grid: rank 2 required");
  GrayImage out;
  out.height = grid.size(0);
  out.width = grid.size(1);
  out.pixels.resize(static_cast<size_t>(out.width) * out.height);
  std::memcpy(out.pixels.data(), grid.data(), out.pixels.size());
  return out;
}

}  // namespace frinet::core
