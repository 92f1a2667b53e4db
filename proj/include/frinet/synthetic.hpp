#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "frinet/dataset.hpp"
#include "frinet/image_io.hpp"

namespace frinet::data {

/// Configuration of the deterministic oriented-shapes dataset. Shapes are
/// strongly anisotropic and carry stripe textures aligned with their own
/// axis, so an orientation change produces a large feature change.
struct SyntheticConfig {
  int num_images = 240;
  int image_size = 64;
  int shape_classes = 9;  // >= 6 so three folds with >= 2 novel classes exist
  double orientation_min_deg = 0.0;
  double orientation_max_deg = 360.0;
  uint64_t rng_seed = 1;
  double min_foreground_frac = 0.02;
  double max_foreground_frac = 0.60;
  double distractor_prob = 0.9;

  void validate() const;
};

/// A parametric shape instance placed on the canvas.
struct SceneShape {
  int class_id = 1;
  double center_x = 0.0;  // pixel coordinates, continuous
  double center_y = 0.0;
  double angle_deg = 0.0;   // orientation of the shape's own axis
  double scale_px = 12.0;   // pixels per canonical unit
  double stripe_period = 6.0;
  double stripe_phase = 0.0;
  std::array<double, 3> color_a{0.8, 0.8, 0.8};
  std::array<double, 3> color_b{0.3, 0.3, 0.3};
};

struct SceneBackground {
  std::array<double, 3> base{0.5, 0.5, 0.5};
  double gradient_dir_deg = 0.0;
  double gradient_amp = 0.12;
  double stripe_angle_deg = 0.0;
  double stripe_period = 9.0;
  double stripe_amp = 0.05;
  double stripe_phase = 0.0;
  double noise_amp = 0.03;
  uint64_t noise_seed = 0;
};

struct Scene {
  int size = 64;
  SceneBackground background;
  std::vector<SceneShape> shapes;  // non-overlapping; first is the primary
};

struct RenderedScene {
  core::RgbImage image;
  core::GrayImage mask;  // 0 background / class ids / 255 boundary ring
};

/// Rasterize a scene: 2x2 supersampled coverage per shape; fully covered
/// cells take the class id, partially covered cells become the ignore ring.
RenderedScene render_scene(const Scene& scene);

/// The scene whose rendering equals rotate_exact(render(scene), 90): shape
/// centers move on the 90-degree orbit and every angle advances with the grid.
Scene rotate_scene_90(const Scene& scene);

/// Canonical-frame membership test for one shape class (used by the
/// rasterizer; exposed for tests).
bool shape_inside(int class_id, double x, double y);

std::vector<std::string> synthetic_class_names(int shape_classes);

/// Generate the full dataset in memory. Pure function of the config.
std::vector<Dataset::Item> generate_synthetic_items(const SyntheticConfig& config);

Dataset generate_synthetic_dataset(const SyntheticConfig& config);

/// Three-fold split preset over `shape_classes` ids (novel thirds in order).
std::vector<SplitConfig> synthetic_splits(int shape_classes);

/// Write images/, masks/, splits.json and classes.json under `root`.
void write_synthetic_dataset(const std::string& root, const SyntheticConfig& config);

}  // namespace frinet::data
