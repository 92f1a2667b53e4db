#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "frinet/tensor.hpp"

namespace frinet::core {

/// Interleaved 8-bit RGB image (row-major).
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;  // 3 * width * height

  uint8_t& at(int y, int x, int c) {
    return pixels[(static_cast<size_t>(y) * width + x) * 3 + c];
  }
  uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<size_t>(y) * width + x) * 3 + c];
  }
};

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;  // width * height

  uint8_t& at(int y, int x) { return pixels[static_cast<size_t>(y) * width + x]; }
  uint8_t at(int y, int x) const { return pixels[static_cast<size_t>(y) * width + x]; }
};

RgbImage read_png_rgb(const std::string& path);
GrayImage read_png_gray(const std::string& path);
void write_png(const std::string& path, const RgbImage& image);
void write_png(const std::string& path, const GrayImage& image);

/// Planar float image in [0,1], shape 3 x H x W.
Tensor<float> to_float_chw(const RgbImage& image);
RgbImage to_rgb8(const Tensor<float>& chw);

Tensor<uint8_t> to_label_grid(const GrayImage& image);
GrayImage from_label_grid(const Tensor<uint8_t>& grid);

}  // namespace frinet::core
