#include "frinet/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "frinet/logging.hpp"
#include "frinet/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace frinet::data {

using core::Rng;

void SyntheticConfig::validate() const {
  if (shape_classes < 6)
    throw std::invalid_argument("SyntheticConfig: need >= 6 shape classes for three folds");
  if (shape_classes > 9)
    throw std::invalid_argument("SyntheticConfig: at most 9 shape classes are defined");
  if (image_size < 64) throw std::invalid_argument("SyntheticConfig: image_size must be >= 64");
  if (num_images < shape_classes)
    throw std::invalid_argument("SyntheticConfig: too few images for the class count");
  if (!(min_foreground_frac > 0.0) || !(max_foreground_frac < 1.0) ||
      min_foreground_frac >= max_foreground_frac)
    throw std::invalid_argument("SyntheticConfig: bad foreground band");
}

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Vec2 {
  double x, y;
};

bool in_rect(double x, double y, double cx, double cy, double hw, double hh) {
  return std::abs(x - cx) <= hw && std::abs(y - cy) <= hh;
}

bool in_tri(double x, double y, Vec2 a, Vec2 b, Vec2 c) {
  const auto side = [](Vec2 p, Vec2 q, double px, double py) {
    return (q.x - p.x) * (py - p.y) - (q.y - p.y) * (px - p.x);
  };
  const double d1 = side(a, b, x, y);
  const double d2 = side(b, c, x, y);
  const double d3 = side(c, a, x, y);
  const bool has_neg = (d1 < 0) || (d2 < 0) || (d3 < 0);
  const bool has_pos = (d1 > 0) || (d2 > 0) || (d3 > 0);
  return !(has_neg && has_pos);
}

bool in_oriented_rect(double x, double y, double cx, double cy, double axis_x,
                      double axis_y, double half_len, double half_wid) {
  const double dx = x - cx;
  const double dy = y - cy;
  const double along = dx * axis_x + dy * axis_y;
  const double across = -dx * axis_y + dy * axis_x;
  return std::abs(along) <= half_len && std::abs(across) <= half_wid;
}

}  // namespace

// Canonical frames span roughly [-1,1]^2 with strong anisotropy per class.
bool shape_inside(int class_id, double x, double y) {
  switch (class_id) {
    case 1:  // bar
      return in_rect(x, y, 0, 0, 1.0, 0.30);
    case 2:  // capsule (elongated ellipse)
      return x * x + (y / 0.32) * (y / 0.32) <= 1.0;
    case 3:  // tee
      return in_rect(x, y, 0, -0.62, 1.0, 0.22) || in_rect(x, y, 0, 0.19, 0.24, 0.81);
    case 4:  // ell
      return in_rect(x, y, -0.76, 0, 0.24, 1.0) || in_rect(x, y, 0.12, 0.76, 0.88, 0.24);
    case 5:  // arrow
      return in_rect(x, y, -0.35, 0, 0.65, 0.20) ||
             in_tri(x, y, Vec2{0.30, -0.60}, Vec2{0.30, 0.60}, Vec2{1.0, 0.0});
    case 6:  // wedge (scalene triangle)
      return in_tri(x, y, Vec2{-1.0, -0.50}, Vec2{1.0, -0.35}, Vec2{-1.0, 0.60});
    case 7:  // staple (U)
      return in_rect(x, y, -0.78, -0.10, 0.22, 0.90) ||
             in_rect(x, y, 0.78, -0.10, 0.22, 0.90) || in_rect(x, y, 0, 0.78, 1.0, 0.22);
    case 8: {  // ess (Z)
      if (in_rect(x, y, 0, -0.78, 0.95, 0.20) || in_rect(x, y, 0, 0.78, 0.95, 0.20))
        return true;
      const double len = std::sqrt(1.5 * 1.5 + 1.56 * 1.56);
      return in_oriented_rect(x, y, 0, 0, -1.5 / len, 1.56 / len, 0.5 * len, 0.17);
    }
    case 9: {  // hook (bar with an open ring at one end)
      if (in_rect(x, y, -0.35, 0, 0.65, 0.18)) return true;
      const double dx = x - 0.55;
      const double dy = y;
      const double r = std::sqrt(dx * dx + dy * dy);
      return r >= 0.26 && r <= 0.55;
    }
    default:
      throw std::invalid_argument("shape_inside: unknown class id " + std::to_string(class_id));
  }
}

std::vector<std::string> synthetic_class_names(int shape_classes) {
  static const std::vector<std::string> kNames = {"bar",   "capsule", "tee",
                                                  "ell",   "arrow",   "wedge",
                                                  "staple", "ess",    "hook"};
  if (shape_classes < 1 || shape_classes > static_cast<int>(kNames.size()))
    throw std::invalid_argument("synthetic_class_names: class count out of range");
  return {kNames.begin(), kNames.begin() + shape_classes};
}

namespace {

// Stripe offsets/periods entangle class identity with orientation: the stripe
// axis is (shape angle + class offset), never an absolute cue on its own.
double class_stripe_offset_deg(int class_id) {
  static const double kOffsets[] = {0, 45, 90, 0, 45, 90, 0, 45, 90};
  return kOffsets[(class_id - 1) % 9];
}

double class_stripe_period(int class_id) {
  static const double kPeriods[] = {5, 6, 7, 8, 5, 6, 7, 8, 5};
  return kPeriods[(class_id - 1) % 9];
}

double pixel_noise(uint64_t seed, int x, int y, int channel) {
  uint64_t h = core::splitmix64(seed ^ (static_cast<uint64_t>(x) * 0x9e3779b97f4a7c15ull));
  h = core::splitmix64(h ^ (static_cast<uint64_t>(y) * 0xc2b2ae3d27d4eb4full));
  h = core::splitmix64(h ^ static_cast<uint64_t>(channel));
  return (static_cast<double>(h >> 11) * 0x1.0p-53) * 2.0 - 1.0;
}

std::array<double, 3> shape_color(const SceneShape& shape, double px, double py) {
  const double a = (shape.angle_deg + class_stripe_offset_deg(shape.class_id)) * kPi / 180.0;
  const double proj = (px - shape.center_x) * std::cos(a) + (py - shape.center_y) * std::sin(a);
  const double t = proj / shape.stripe_period + shape.stripe_phase;
  const double frac = t - std::floor(t);
  return frac < 0.5 ? shape.color_a : shape.color_b;
}

std::array<double, 3> background_color(const SceneBackground& bg, int size, int x, int y) {
  const double gd = bg.gradient_dir_deg * kPi / 180.0;
  const double gproj =
      ((x + 0.5) * std::cos(gd) + (y + 0.5) * std::sin(gd)) / size;  // roughly [-1,1]
  const double sa = bg.stripe_angle_deg * kPi / 180.0;
  const double st = ((x + 0.5) * std::cos(sa) + (y + 0.5) * std::sin(sa)) / bg.stripe_period +
                    bg.stripe_phase;
  const double stripe = (st - std::floor(st)) < 0.5 ? 1.0 : -1.0;
  std::array<double, 3> c;
  for (int ch = 0; ch < 3; ++ch) {
    c[ch] = bg.base[ch] + bg.gradient_amp * (gproj - 0.5) + bg.stripe_amp * stripe +
            bg.noise_amp * pixel_noise(bg.noise_seed, x, y, ch);
  }
  return c;
}

// Coverage of one pixel by one shape: 2x2 symmetric subsamples. The offset
// pattern maps to itself under 90-degree grid rotation, which keeps masks
// equivariant.
int shape_coverage_count(const SceneShape& shape, int x, int y) {
  static const double kOffsets[4][2] = {
      {0.25, 0.25}, {0.75, 0.25}, {0.25, 0.75}, {0.75, 0.75}};
  const double a = shape.angle_deg * kPi / 180.0;
  const double ca = std::cos(a);
  const double sa = std::sin(a);
  int count = 0;
  for (const auto& off : kOffsets) {
    const double px = x + off[0] - shape.center_x;
    const double py = y + off[1] - shape.center_y;
    // rotate by -angle into the canonical frame, then unscale
    const double lx = (px * ca + py * sa) / shape.scale_px;
    const double ly = (-px * sa + py * ca) / shape.scale_px;
    if (shape_inside(shape.class_id, lx, ly)) ++count;
  }
  return count;
}

}  // namespace

RenderedScene render_scene(const Scene& scene) {
  const int size = scene.size;
  RenderedScene out;
  out.image.width = size;
  out.image.height = size;
  out.image.pixels.assign(static_cast<size_t>(size) * size * 3, 0);
  out.mask.width = size;
  out.mask.height = size;
  out.mask.pixels.assign(static_cast<size_t>(size) * size, 0);

  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      std::array<double, 3> color = background_color(scene.background, size, x, y);
      uint8_t label = 0;
      double partial = 0.0;
      for (const auto& shape : scene.shapes) {
        const int cov = shape_coverage_count(shape, x, y);
        if (cov == 0) continue;
        const auto sc = shape_color(shape, x + 0.5, y + 0.5);
        const double frac = cov / 4.0;
        for (int ch = 0; ch < 3; ++ch) color[ch] = (1 - frac) * color[ch] + frac * sc[ch];
        if (cov == 4) {
          label = static_cast<uint8_t>(shape.class_id);
          partial = 0.0;
          break;  // shapes never overlap; fully covered wins
        }
        partial += frac;
      }
      if (label == 0 && partial > 0.0) label = 255;  // boundary ring
      out.mask.at(y, x) = label;
      for (int ch = 0; ch < 3; ++ch) {
        const double v = std::clamp(color[ch], 0.0, 1.0);
        out.image.at(y, x, ch) = static_cast<uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  return out;
}

Scene rotate_scene_90(const Scene& scene) {
  // Grid map: output pixel (row r, col c) takes input (row c, col S-1-r),
  // i.e. continuous point (x, y) -> (y, S - x). Shape axes advance by -90
  // degrees in this frame.
  Scene out = scene;
  const double s = static_cast<double>(scene.size);
  for (auto& shape : out.shapes) {
    const double cx = shape.center_x;
    const double cy = shape.center_y;
    shape.center_x = cy;
    shape.center_y = s - cx;
    shape.angle_deg = shape.angle_deg - 90.0;
  }
  out.background.gradient_dir_deg -= 90.0;
  out.background.stripe_angle_deg -= 90.0;
  return out;
}

namespace {

// Monte Carlo estimate of each canonical shape area, cached; used to size
// instances toward a target pixel fraction.
double canonical_area(int class_id) {
  static std::array<double, 10> cache{};
  static std::array<bool, 10> ready{};
  if (!ready[static_cast<size_t>(class_id)]) {
    const int n = 160;
    long hits = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double x = -1.3 + 2.6 * (i + 0.5) / n;
        const double y = -1.3 + 2.6 * (j + 0.5) / n;
        if (shape_inside(class_id, x, y)) ++hits;
      }
    cache[static_cast<size_t>(class_id)] =
        2.6 * 2.6 * static_cast<double>(hits) / (static_cast<double>(n) * n);
    ready[static_cast<size_t>(class_id)] = true;
  }
  return cache[static_cast<size_t>(class_id)];
}

SceneShape sample_shape(int class_id, const SyntheticConfig& cfg, Rng& rng) {
  SceneShape shape;
  shape.class_id = class_id;
  const double s = cfg.image_size;
  // Target the primary foreground band with margin for the ignore ring.
  const double frac = rng.uniform(0.045, 0.13);
  shape.scale_px = std::sqrt(frac * s * s / canonical_area(class_id));
  const double margin = shape.scale_px * 1.45 + 2.0;
  const double lo = margin;
  const double hi = s - margin;
  if (lo >= hi) {
    shape.center_x = s / 2;
    shape.center_y = s / 2;
  } else {
    shape.center_x = rng.uniform(lo, hi);
    shape.center_y = rng.uniform(lo, hi);
  }
  shape.angle_deg = rng.uniform(cfg.orientation_min_deg, cfg.orientation_max_deg);
  shape.stripe_period =
      class_stripe_period(class_id) * shape.scale_px / 9.0 + rng.uniform(-0.5, 0.5);
  shape.stripe_period = std::max(3.0, shape.stripe_period);
  shape.stripe_phase = rng.uniform01();
  for (int ch = 0; ch < 3; ++ch) {
    shape.color_a[static_cast<size_t>(ch)] = rng.uniform(0.55, 0.95);
    shape.color_b[static_cast<size_t>(ch)] = rng.uniform(0.05, 0.45);
  }
  return shape;
}

SceneBackground sample_background(Rng& rng) {
  SceneBackground bg;
  for (int ch = 0; ch < 3; ++ch) bg.base[static_cast<size_t>(ch)] = rng.uniform(0.35, 0.65);
  bg.gradient_dir_deg = rng.uniform(0.0, 360.0);
  bg.gradient_amp = rng.uniform(0.06, 0.16);
  bg.stripe_angle_deg = rng.uniform(0.0, 360.0);
  bg.stripe_period = rng.uniform(7.0, 12.0);
  bg.stripe_amp = rng.uniform(0.02, 0.06);
  bg.stripe_phase = rng.uniform01();
  bg.noise_amp = rng.uniform(0.015, 0.04);
  bg.noise_seed = rng.next_u64();
  return bg;
}

struct MaskStats {
  double total_frac = 0.0;
  std::map<int, long> pixels_per_class;
};

MaskStats mask_stats(const core::GrayImage& mask) {
  MaskStats st;
  long labeled = 0;
  for (uint8_t v : mask.pixels) {
    if (v == 0 || v == 255) continue;
    ++labeled;
    ++st.pixels_per_class[v];
  }
  st.total_frac = static_cast<double>(labeled) / static_cast<double>(mask.pixels.size());
  return st;
}

}  // namespace

std::vector<Dataset::Item> generate_synthetic_items(const SyntheticConfig& config) {
  config.validate();
  std::vector<Dataset::Item> items;
  items.reserve(static_cast<size_t>(config.num_images));
  for (int index = 0; index < config.num_images; ++index) {
    const int primary_class = 1 + index % config.shape_classes;
    Rng rng(core::derive_seed(config.rng_seed, "synthetic-image", static_cast<uint64_t>(index)));

    RenderedScene rendered;
    bool accepted = false;
    for (int attempt = 0; attempt < 100 && !accepted; ++attempt) {
      Scene scene;
      scene.size = config.image_size;
      scene.background = sample_background(rng);
      SceneShape primary = sample_shape(primary_class, config, rng);
      scene.shapes.push_back(primary);
      if (rng.bernoulli(config.distractor_prob)) {
        const int other =
            1 + static_cast<int>(rng.uniform_u64(static_cast<uint64_t>(config.shape_classes - 1)));
        const int distractor_class = other >= primary_class ? other + 1 : other;
        for (int place = 0; place < 40; ++place) {
          SceneShape d = sample_shape(distractor_class, config, rng);
          const double dx = d.center_x - primary.center_x;
          const double dy = d.center_y - primary.center_y;
          const double dist = std::sqrt(dx * dx + dy * dy);
          if (dist >= 1.30 * (d.scale_px + primary.scale_px)) {
            scene.shapes.push_back(d);
            break;
          }
        }
      }
      rendered = render_scene(scene);
      const MaskStats st = mask_stats(rendered.mask);
      const long primary_px = st.pixels_per_class.count(primary_class)
                                  ? st.pixels_per_class.at(primary_class)
                                  : 0;
      const double total_px = static_cast<double>(config.image_size) * config.image_size;
      const bool all_present = st.pixels_per_class.size() == scene.shapes.size();
      if (primary_px >= static_cast<long>(config.min_foreground_frac * total_px) &&
          st.total_frac >= config.min_foreground_frac &&
          st.total_frac <= config.max_foreground_frac && all_present)
        accepted = true;
    }
    if (!accepted)
      throw std::runtime_error("synthetic generator: could not place a valid scene for image " +
                               std::to_string(index));

    Dataset::Item item;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "img_%05d", index);
    item.id = buf;
    item.image = core::to_float_chw(rendered.image);
    item.mask = core::to_label_grid(rendered.mask);
    for (long i = 0; i < item.mask.numel(); ++i) item.classes.insert(item.mask[i]);
    item.classes.erase(0);
    item.classes.erase(255);
    items.push_back(std::move(item));
  }
  return items;
}

Dataset generate_synthetic_dataset(const SyntheticConfig& config) {
  Dataset ds;
  for (auto& item : generate_synthetic_items(config)) ds.add(std::move(item));
  return ds;
}

std::vector<SplitConfig> synthetic_splits(int shape_classes) {
  const auto names = synthetic_class_names(shape_classes);
  std::map<int, std::string> name_map;
  for (int i = 0; i < shape_classes; ++i) name_map[i + 1] = names[static_cast<size_t>(i)];

  // Three folds; each takes a contiguous third (at least 2 classes) as novel.
  std::vector<SplitConfig> folds;
  const int per_fold = shape_classes / 3;
  for (int f = 0; f < 3; ++f) {
    SplitConfig cfg;
    cfg.fold = f;
    cfg.class_names = name_map;
    const int lo = 1 + f * per_fold;
    const int hi = (f == 2) ? shape_classes : lo + per_fold - 1;
    for (int c = 1; c <= shape_classes; ++c) {
      if (c >= lo && c <= hi)
        cfg.novel_classes.push_back(c);
      else
        cfg.base_classes.push_back(c);
    }
    cfg.validate();
    folds.push_back(std::move(cfg));
  }
  return folds;
}

void write_synthetic_dataset(const std::string& root, const SyntheticConfig& config) {
  const fs::path base(root);
  fs::create_directories(base / "images");
  fs::create_directories(base / "masks");

  const auto items = generate_synthetic_items(config);
  for (const auto& item : items) {
    core::write_png((base / "images" / (item.id + ".png")).string(), core::to_rgb8(item.image));
    core::write_png((base / "masks" / (item.id + ".png")).string(),
                    core::from_label_grid(item.mask));
  }

  json splits_json;
  splits_json["folds"] = json::array();
  for (const auto& fold : synthetic_splits(config.shape_classes)) {
    json f;
    f["fold"] = fold.fold;
    f["base_classes"] = fold.base_classes;
    f["novel_classes"] = fold.novel_classes;
    splits_json["folds"].push_back(f);
  }
  std::ofstream sf(base / "splits.json");
  sf << splits_json.dump(2) << "\n";

  json classes_json;
  const auto names = synthetic_class_names(config.shape_classes);
  for (int i = 0; i < config.shape_classes; ++i)
    classes_json[std::to_string(i + 1)] = names[static_cast<size_t>(i)];
  std::ofstream cf(base / "classes.json");
  cf << classes_json.dump(2) << "\n";
}

}  // namespace frinet::data
