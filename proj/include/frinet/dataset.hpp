#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "frinet/rng.hpp"
#include "frinet/tensor.hpp"

namespace frinet::data {

using core::Rng;
using core::Tensor;

enum class Phase { kTrain, kTest };

/// One image with its dense label grid. Labels: 0 = background, c >= 1 =
/// class id, 255 = ignore. Transform bookkeeping (flip / composed rotation)
/// rides along so frozen-feature caches can key on it.
struct ImageSample {
  Tensor<float> image;   // 3 x H x W in [0,1]
  Tensor<uint8_t> mask;  // H x W
  std::set<int> class_ids_present;
  std::string id;
  bool flipped = false;
  int pre_rotation = 0;

  void validate() const;
};

struct Episode {
  std::vector<ImageSample> supports;
  ImageSample query;
  int target_class = 0;
  int shot_count = 0;
  int fold = 0;

  std::string episode_key() const;
};

struct SplitConfig {
  int fold = 0;
  std::vector<int> base_classes;
  std::vector<int> novel_classes;
  std::map<int, std::string> class_names;

  void validate() const;
  const std::vector<int>& classes_for_phase(Phase phase) const {
    return phase == Phase::kTrain ? base_classes : novel_classes;
  }
  bool is_novel(int class_id) const;
};

/// In-memory indexed dataset. Images are indexed by the classes present in
/// their masks so episodes can be drawn per class.
class Dataset {
 public:
  struct Item {
    std::string id;
    Tensor<float> image;
    Tensor<uint8_t> mask;
    std::set<int> classes;
  };

  void add(Item item);
  size_t size() const { return items_.size(); }
  const Item& item(size_t i) const { return items_.at(i); }

  /// Indices of images containing at least one pixel of the class.
  const std::vector<size_t>& images_with_class(int class_id) const;

  size_t count_images_with_any(const std::vector<int>& classes) const;

  /// Load `root/images/*.png` + `root/masks/*.png` (same stems).
  static Dataset load_dir(const std::string& root);

 private:
  std::vector<Item> items_;
  std::map<int, std::vector<size_t>> by_class_;
  static const std::vector<size_t> kNoImages;
};

/// Parse `splits.json` (+ class names from `classes.json`) into per-fold
/// configurations.
std::vector<SplitConfig> load_splits(const std::string& splits_path,
                                     const std::string& classes_path);

/// Convenience: locate splits.json/classes.json under a dataset root.
SplitConfig load_split_for_dataset(const std::string& root, int fold);

// --- sample-level transforms ---------------------------------------------

/// Binarize an item's mask against a target class: {0, 1, 255}.
ImageSample binarize_to_class(const Dataset::Item& item, int target_class);

/// Bilinear image / nearest mask resize to a square size.
ImageSample resize_sample(const ImageSample& s, int size);

/// Joint exact rotation of image and mask; composes into `pre_rotation`.
ImageSample rotate_sample(const ImageSample& s, int angle);

/// Joint left-right reflection of image and mask.
ImageSample hflip_sample(const ImageSample& s);

/// With probability 0.5, reflect image and mask about setting the vertical axis.
ImageSample augment_flip(const ImageSample& s, Rng& rng);

// --- episodic sampling -----------------------------------------------------

/// Draw one K-shot episode: a class uniform over the phase's split, then
/// K+1 distinct images containing it, masks binarized to the target class.
/// Deterministic given rng_seed. Classes without K+1 usable images are
/// resampled; if no class qualifies this is a configuration error.
Episode sample_episode(const Dataset& dataset, const SplitConfig& split, Phase phase,
                       int shots, uint64_t rng_seed, int input_size);

}  // namespace frinet::data
