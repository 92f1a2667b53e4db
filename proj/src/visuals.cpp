#include "frinet/visuals.hpp"

#include <array>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>
#include <stdexcept>

namespace fs = std::filesystem;

namespace frinet::evaluation {

namespace {

constexpr char kDumpMagic[4] = {'F', 'R', 'T', 'D'};

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_header(std::FILE* f, uint8_t dtype, const std::vector<int>& shape) {
  std::fwrite(kDumpMagic, 1, 4, f);
  const uint32_t version = 1;
  std::fwrite(&version, sizeof(version), 1, f);
  std::fwrite(&dtype, 1, 1, f);
  const uint8_t rank = static_cast<uint8_t>(shape.size());
  std::fwrite(&rank, 1, 1, f);
  const uint16_t reserved = 0;
  std::fwrite(&reserved, sizeof(reserved), 1, f);
  for (int d : shape) {
    const uint32_t u = static_cast<uint32_t>(d);
    std::fwrite(&u, sizeof(u), 1, f);
  }
}

}  // namespace

void write_tensor_dump(const std::string& path, const Tensor<float>& tensor) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("cannot write dump: " + path);
  write_header(f.get(), 1, tensor.shape());
  std::fwrite(tensor.data(), sizeof(float), static_cast<size_t>(tensor.numel()), f.get());
}

void write_tensor_dump(const std::string& path, const Tensor<uint8_t>& tensor) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("cannot write dump: " + path);
  write_header(f.get(), 2, tensor.shape());
  std::fwrite(tensor.data(), 1, static_cast<size_t>(tensor.numel()), f.get());
}

Tensor<float> read_tensor_dump_f32(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("cannot read dump: " + path);
  auto read_raw = [&](void* p, size_t n) {
    if (std::fread(p, 1, n, f.get()) != n)
      throw std::runtime_error("truncated dump: " + path);
  };
  char magic[4];
  read_raw(magic, 4);
  if (std::memcmp(magic, kDumpMagic, 4) != 0)
    throw std::runtime_error("not a tensor dump: " + path);
  uint32_t version;
  read_raw(&version, sizeof(version));
  uint8_t dtype, rank;
  read_raw(&dtype, 1);
  read_raw(&rank, 1);
  uint16_t reserved;
  read_raw(&reserved, sizeof(reserved));
  if (dtype != 1) throw std::runtime_error("dump is not float32: " + path);
  std::vector<int> shape(rank);
  for (auto& d : shape) {
    uint32_t u;
    read_raw(&u, sizeof(u));
    d = static_cast<int>(u);
  }
  Tensor<float> out(shape);
  if (std::fread(out.data(), sizeof(float), static_cast<size_t>(out.numel()), f.get()) !=
      static_cast<size_t>(out.numel()))
    throw std::runtime_error("truncated dump: " + path);
  return out;
}

std::array<uint8_t, 3> colormap(double v) {
  static const double stops[5][3] = {{0.05, 0.03, 0.35},
                                     {0.05, 0.45, 0.60},
                                     {0.10, 0.70, 0.30},
                                     {0.95, 0.90, 0.20},
                                     {1.00, 1.00, 1.00}};
  v = std::clamp(v, 0.0, 1.0);
  const double t = v * 4.0;
  const int lo = std::min(3, static_cast<int>(t));
  const double f = t - lo;
  std::array<uint8_t, 3> out;
  for (int c = 0; c < 3; ++c) {
    const double x = stops[lo][c] * (1 - f) + stops[lo + 1][c] * f;
    out[static_cast<size_t>(c)] = static_cast<uint8_t>(std::lround(x * 255.0));
  }
  return out;
}

RgbImage heatmap_image(const Tensor<float>& map, double lo, double hi) {
  if (map.rank() != 2) throw std::invalid_argument("heatmap_image: rank 2 required");
  RgbImage out;
  out.height = map.size(0);
  out.width = map.size(1);
  out.pixels.resize(static_cast<size_t>(out.width) * out.height * 3);
  const double span = hi - lo;
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) {
      const double v = span > 0 ? (map(y, x) - lo) / span : 0.0;
      const auto c = colormap(v);
      for (int ch = 0; ch < 3; ++ch) out.at(y, x, ch) = c[static_cast<size_t>(ch)];
    }
  return out;
}

RgbImage overlay_mask(const Tensor<float>& image_chw, const Tensor<uint8_t>& mask,
                      const std::array<uint8_t, 3>& color) {
  RgbImage out = core::to_rgb8(image_chw);
  if (mask.size(0) != out.height || mask.size(1) != out.width)
    throw std::invalid_argument("overlay_mask: size mismatch");
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) {
      if (mask(y, x) != 1) continue;
      for (int ch = 0; ch < 3; ++ch) {
        const int blended = (out.at(y, x, ch) + color[static_cast<size_t>(ch)] + 1) / 2;
        out.at(y, x, ch) = static_cast<uint8_t>(blended);
      }
    }
  return out;
}

RgbImage contour_overlay(const Tensor<float>& image_chw, const Tensor<uint8_t>& mask,
                         const std::array<uint8_t, 3>& color) {
  RgbImage out = core::to_rgb8(image_chw);
  const int h = mask.size(0);
  const int w = mask.size(1);
  auto fg = [&](int y, int x) {
    return y >= 0 && y < h && x >= 0 && x < w && mask(y, x) == 1;
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (mask(y, x) != 1) continue;
      const bool boundary = !fg(y - 1, x) || !fg(y + 1, x) || !fg(y, x - 1) || !fg(y, x + 1);
      if (!boundary) continue;
      for (int ch = 0; ch < 3; ++ch) out.at(y, x, ch) = color[static_cast<size_t>(ch)];
    }
  return out;
}

std::vector<std::string> render_visuals(const data::Episode& episode,
                                        const std::vector<Tensor<float>>& relation_maps,
                                        const Tensor<float>& fused_logits,
                                        const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (!fs::is_directory(out_dir))
    throw std::runtime_error("render_visuals: cannot create directory " + out_dir);

  const std::array<uint8_t, 3> kGreen{40, 220, 40};
  const std::array<uint8_t, 3> kRed{230, 40, 40};
  const std::array<uint8_t, 3> kYellow{250, 220, 30};

  std::vector<std::string> files;
  auto emit = [&](const std::string& name, const RgbImage& img) {
    const std::string path = (fs::path(out_dir) / name).string();
    core::write_png(path, img);
    files.push_back(path);
  };

  emit("support.png",
       contour_overlay(episode.supports.at(0).image, episode.supports.at(0).mask, kYellow));
  emit("query.png", core::to_rgb8(episode.query.image));
  emit("gt_overlay.png", overlay_mask(episode.query.image, episode.query.mask, kGreen));
  emit("pred_overlay.png",
       overlay_mask(episode.query.image, rothead::predict_mask(fused_logits), kRed));

  // Relation weights of the 0-degree branch, one panel per orientation.
  if (!relation_maps.empty()) {
    const auto& rel = relation_maps.front();
    const int n = rel.size(0);
    const int h = rel.size(1);
    const int w = rel.size(2);
    RgbImage panel;
    panel.height = h;
    panel.width = n * w + (n - 1);
    panel.pixels.assign(static_cast<size_t>(panel.width) * panel.height * 3, 255);
    for (int o = 0; o < n; ++o) {
      Tensor<float> map({h, w});
      std::copy(rel.data() + static_cast<long>(o) * h * w,
                rel.data() + static_cast<long>(o + 1) * h * w, map.data());
      const RgbImage tile = heatmap_image(map, 0.0, 1.0);
      const int x0 = o * (w + 1);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          for (int ch = 0; ch < 3; ++ch)
            panel.at(y, x0 + x, ch) = tile.at(y, x, ch);
    }
    emit("relations.png", panel);
  }
  return files;
}

}  // namespace frinet::evaluation
