#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>

#include "frinet/dataset.hpp"
#include "frinet/serialize.hpp"
#include "frinet/synthetic.hpp"

using namespace frinet;
namespace fs = std::filesystem;

namespace {

data::SyntheticConfig small_config() {
  data::SyntheticConfig cfg;
  cfg.num_images = 36;
  cfg.image_size = 64;
  cfg.shape_classes = 9;
  cfg.rng_seed = 3;
  return cfg;
}

uint64_t items_hash(const std::vector<data::Dataset::Item>& items) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& item : items) {
    h = core::fnv1a64_bytes(item.id.data(), item.id.size(), h);
    h = core::fnv1a64_bytes(item.image.data(), sizeof(float) * item.image.numel(), h);
    h = core::fnv1a64_bytes(item.mask.data(), item.mask.numel(), h);
  }
  return h;
}

}  // namespace

TEST_CASE("generation is a pure function of the config") {
  const auto cfg = small_config();
  const auto a = data::generate_synthetic_items(cfg);
  const auto b = data::generate_synthetic_items(cfg);
  REQUIRE(a.size() == b.size());
  CHECK(items_hash(a) == items_hash(b));
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(core::bitwise_equal(a[i].image, b[i].image));
    CHECK(core::bitwise_equal(a[i].mask, b[i].mask));
  }
  auto cfg2 = cfg;
  cfg2.rng_seed = 4;
  CHECK(items_hash(data::generate_synthetic_items(cfg2)) != items_hash(a));
}

TEST_CASE("every mask stays in the configured foreground band") {
  auto cfg = small_config();
  cfg.num_images = 90;
  const auto items = data::generate_synthetic_items(cfg);
  for (const auto& item : items) {
    long labeled = 0;
    for (long i = 0; i < item.mask.numel(); ++i) {
      const uint8_t v = item.mask[i];
      if (v != 0 && v != 255) {
        ++labeled;
        CHECK(v >= 1);
        CHECK(v <= cfg.shape_classes);
      }
    }
    const double frac = static_cast<double>(labeled) / item.mask.numel();
    CHECK(frac >= cfg.min_foreground_frac);
    CHECK(frac <= cfg.max_foreground_frac);
    CHECK(!item.classes.empty());
  }
}

TEST_CASE("90-degree re-render matches rotate_exact within 1% of pixels") {
  data::Scene scene;
  scene.size = 64;
  core::Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    scene.shapes.clear();
    data::SceneShape s;
    s.class_id = 1 + static_cast<int>(rng.uniform_u64(9));
    s.center_x = rng.uniform(24.0, 40.0);
    s.center_y = rng.uniform(24.0, 40.0);
    s.angle_deg = rng.uniform(0.0, 360.0);
    s.scale_px = rng.uniform(9.0, 13.0);
    s.stripe_period = 6.0;
    scene.shapes.push_back(s);

    const auto base = data::render_scene(scene);
    const auto rotated = data::render_scene(data::rotate_scene_90(scene));
    const auto expected = core::rotate_exact(core::to_label_grid(base.mask), 90);
    const auto actual = core::to_label_grid(rotated.mask);
    REQUIRE(expected.shape() == actual.shape());
    int disagree = 0;
    for (long i = 0; i < expected.numel(); ++i)
      if (expected[i] != actual[i]) ++disagree;
    CHECK(disagree <= static_cast<int>(0.01 * expected.numel()));
  }
}

TEST_CASE("shape membership is anisotropic for every class") {
  // A quarter turn must change the canonical footprint; rotation-symmetric
  // shapes would never produce orientation-varying prototypes.
  for (int c = 1; c <= 9; ++c) {
    int diff = 0;
    const int n = 80;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double x = -1.3 + 2.6 * (i + 0.5) / n;
        const double y = -1.3 + 2.6 * (j + 0.5) / n;
        const bool a = data::shape_inside(c, x, y);
        const bool b = data::shape_inside(c, y, -x);  // quarter turn
        if (a != b) ++diff;
      }
    CHECK(diff > n * n / 50);
  }
}

TEST_CASE("synthetic splits are three disjoint folds covering all classes") {
  const auto folds = data::synthetic_splits(9);
  REQUIRE(folds.size() == 3);
  std::set<int> novel_union;
  for (const auto& fold : folds) {
    fold.validate();
    CHECK(fold.novel_classes.size() >= 2);
    for (int c : fold.novel_classes) novel_union.insert(c);
  }
  CHECK(novel_union.size() == 9);
  CHECK(folds[0].novel_classes == std::vector<int>{1, 2, 3});
  CHECK(folds[1].novel_classes == std::vector<int>{4, 5, 6});
  CHECK(folds[2].novel_classes == std::vector<int>{7, 8, 9});
}

TEST_CASE("dataset round trip through PNG is lossless") {
  auto cfg = small_config();
  cfg.num_images = 12;
  const auto dir = fs::temp_directory_path() / "frinet_synth_roundtrip";
  fs::remove_all(dir);
  data::write_synthetic_dataset(dir.string(), cfg);

  const auto expected = data::generate_synthetic_items(cfg);
  const auto loaded = data::Dataset::load_dir(dir.string());
  REQUIRE(loaded.size() == expected.size());
  for (size_t i = 0; i < expected.size(); ++i) {
    const auto& a = expected[i];
    const auto& b = loaded.item(i);
    CHECK(a.id == b.id);
    CHECK(core::bitwise_equal(a.mask, b.mask));
    CHECK(core::max_abs_diff(a.image, b.image) < 1e-6f);  // u8-quantized on both paths
    CHECK(a.classes == b.classes);
  }
  const auto split = data::load_split_for_dataset(dir.string(), 1);
  CHECK(split.novel_classes == std::vector<int>{4, 5, 6});
  fs::remove_all(dir);
}

TEST_CASE("config validation rejects bad settings") {
  data::SyntheticConfig cfg;
  cfg.shape_classes = 5;
  CHECK_THROWS(data::generate_synthetic_items(cfg));
  cfg = data::SyntheticConfig{};
  cfg.image_size = 32;
  CHECK_THROWS(data::generate_synthetic_items(cfg));
}
