#include "frinet/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "frinet/image_io.hpp"
#include "frinet/logging.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace frinet::data {

const std::vector<size_t> Dataset::kNoImages{};

void ImageSample::validate() const {
  if (image.rank() != 3 || image.size(0) != 3)
    throw std::invalid_argument("ImageSample: image must be 3 x H x W");
  if (mask.rank() != 2) throw std::invalid_argument("ImageSample: mask must be H x W");
  if (image.size(1) != mask.size(0) || image.size(2) != mask.size(1))
    throw std::invalid_argument("ImageSample: image/mask size mismatch");
}

std::string Episode::episode_key() const {
  std::string key = "c" + std::to_string(target_class) + "|s:";
  for (size_t i = 0; i < supports.size(); ++i) {
    if (i) key += ",";
    key += supports[i].id;
  }
  key += "|q:" + query.id;
  return key;
}

void SplitConfig::validate() const {
  std::set<int> base(base_classes.begin(), base_classes.end());
  std::set<int> novel(novel_classes.begin(), novel_classes.end());
  if (base.size() != base_classes.size() || novel.size() != novel_classes.size())
    throw std::invalid_argument("SplitConfig: duplicate class ids in a split");
  for (int c : novel)
    if (base.count(c))
      throw std::invalid_argument("SplitConfig: base and novel classes overlap (class " +
                                  std::to_string(c) + ")");
  for (const auto& [id, name] : class_names) {
    if (!base.count(id) && !novel.count(id))
      throw std::invalid_argument("SplitConfig: class " + std::to_string(id) + " (" + name +
                                  ") missing from both splits");
  }
  if (class_names.size() != base.size() + novel.size())
    throw std::invalid_argument("SplitConfig: split references unnamed classes");
}

bool SplitConfig::is_novel(int class_id) const {
  return std::find(novel_classes.begin(), novel_classes.end(), class_id) !=
         novel_classes.end();
}

void Dataset::add(Item item) {
  const size_t index = items_.size();
  for (int c : item.classes)
    if (c != 0 && c != 255) by_class_[c].push_back(index);
  items_.push_back(std::move(item));
}

const std::vector<size_t>& Dataset::images_with_class(int class_id) const {
  auto it = by_class_.find(class_id);
  return it == by_class_.end() ? kNoImages : it->second;
}

size_t Dataset::count_images_with_any(const std::vector<int>& classes) const {
  size_t n = 0;
  for (const auto& item : items_) {
    for (int c : classes) {
      if (item.classes.count(c)) {
        ++n;
        break;
      }
    }
  }
  return n;
}

Dataset Dataset::load_dir(const std::string& root) {
  const fs::path images_dir = fs::path(root) / "images";
  const fs::path masks_dir = fs::path(root) / "masks";
  if (!fs::is_directory(images_dir) || !fs::is_directory(masks_dir))
    throw std::runtime_error("dataset root must contain images/ and masks/: " + root);

  std::vector<fs::path> image_files;
  for (const auto& entry : fs::directory_iterator(images_dir))
    if (entry.path().extension() == ".png") image_files.push_back(entry.path());
  std::sort(image_files.begin(), image_files.end());

  Dataset ds;
  for (const auto& path : image_files) {
    const fs::path mask_path = masks_dir / path.filename();
    if (!fs::exists(mask_path))
      throw std::runtime_error("missing mask for " + path.filename().string());
    Item item;
    item.id = path.stem().string();
    item.image = core::to_float_chw(core::read_png_rgb(path.string()));
    item.mask = core::to_label_grid(core::read_png_gray(mask_path.string()));
    if (item.image.size(1) != item.mask.size(0) || item.image.size(2) != item.mask.size(1))
      throw std::runtime_error("image/mask size mismatch for " + item.id);
    for (long i = 0; i < item.mask.numel(); ++i) item.classes.insert(item.mask[i]);
    item.classes.erase(0);
    item.classes.erase(255);
    ds.add(std::move(item));
  }
  if (ds.size() == 0) throw std::runtime_error("dataset is empty: " + root);
  return ds;
}

std::vector<SplitConfig> load_splits(const std::string& splits_path,
                                     const std::string& classes_path) {
  std::ifstream sf(splits_path);
  if (!sf) throw std::runtime_error("cannot open " + splits_path);
  std::ifstream cf(classes_path);
  if (!cf) throw std::runtime_error("cannot open " + classes_path);
  json splits_json = json::parse(sf);
  json classes_json = json::parse(cf);

  std::map<int, std::string> names;
  for (const auto& [key, value] : classes_json.items())
    names[std::stoi(key)] = value.get<std::string>();

  std::vector<SplitConfig> out;
  for (const auto& fold_json : splits_json.at("folds")) {
    SplitConfig cfg;
    cfg.fold = fold_json.at("fold").get<int>();
    cfg.base_classes = fold_json.at("base_classes").get<std::vector<int>>();
    cfg.novel_classes = fold_json.at("novel_classes").get<std::vector<int>>();
    cfg.class_names = names;
    cfg.validate();
    out.push_back(std::move(cfg));
  }
  if (out.empty()) throw std::runtime_error("no folds defined in " + splits_path);
  return out;
}

SplitConfig load_split_for_dataset(const std::string& root, int fold) {
  const fs::path base(root);
  auto folds = load_splits((base / "splits.json").string(), (base / "classes.json").string());
  for (auto& f : folds)
    if (f.fold == fold) return f;
  throw std::runtime_error("fold " + std::to_string(fold) + " not defined for dataset " + root);
}

ImageSample binarize_to_class(const Dataset::Item& item, int target_class) {
  ImageSample s;
  s.id = item.id;
  s.image = item.image;
  s.mask = Tensor<uint8_t>(item.mask.shape());
  bool any_fg = false;
  for (long i = 0; i < item.mask.numel(); ++i) {
    const uint8_t v = item.mask[i];
    if (v == 255)
      s.mask[i] = 255;
    else if (v == target_class) {
      s.mask[i] = 1;
      any_fg = true;
    } else
      s.mask[i] = 0;
  }
  if (any_fg) s.class_ids_present.insert(1);
  return s;
}

ImageSample resize_sample(const ImageSample& s, int size) {
  if (s.image.size(1) == size && s.image.size(2) == size) return s;
  ImageSample out = s;
  out.image = core::resize_bilinear(s.image, size, size);
  out.mask = core::resize_nearest(s.mask, size, size);
  out.class_ids_present.clear();
  for (long i = 0; i < out.mask.numel(); ++i)
    if (out.mask[i] != 0 && out.mask[i] != 255) out.class_ids_present.insert(out.mask[i]);
  return out;
}

ImageSample rotate_sample(const ImageSample& s, int angle) {
  if (angle == 0) return s;
  ImageSample out = s;
  out.image = core::rotate_exact(s.image, angle);
  out.mask = core::rotate_exact(s.mask, angle);
  out.pre_rotation = (s.pre_rotation + angle) % 360;
  return out;
}

ImageSample hflip_sample(const ImageSample& s) {
  ImageSample out = s;
  out.image = core::hflip(s.image);
  out.mask = core::hflip(s.mask);
  out.flipped = !s.flipped;
  // A flip does not commute with prior rotations in general; samples are
  // flipped before any rotation in this pipeline.
  return out;
}

ImageSample augment_flip(const ImageSample& s, Rng& rng) {
  return rng.bernoulli(0.5) ? hflip_sample(s) : s;
}

namespace {

bool has_foreground(const Tensor<uint8_t>& mask) {
  for (long i = 0; i < mask.numel(); ++i)
    if (mask[i] == 1) return true;
  return false;
}

}  // namespace

Episode sample_episode(const Dataset& dataset, const SplitConfig& split, Phase phase,
                       int shots, uint64_t rng_seed, int input_size) {
  if (shots < 1) throw std::invalid_argument("sample_episode: shots must be >= 1");
  const auto& classes = split.classes_for_phase(phase);
  if (classes.empty()) throw std::runtime_error("sample_episode: empty class split");

  bool any_usable = false;
  for (int c : classes)
    if (dataset.images_with_class(c).size() >= static_cast<size_t>(shots) + 1) {
      any_usable = true;
      break;
    }
  if (!any_usable)
    throw std::runtime_error(
        "sample_episode: no class in the split has enough images for " +
        std::to_string(shots) + "-shot episodes");

  Rng rng(rng_seed);
  constexpr int kMaxAttempts = 1000;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    const int target = classes[rng.uniform_u64(classes.size())];
    const auto& candidates = dataset.images_with_class(target);
    if (candidates.size() < static_cast<size_t>(shots) + 1) continue;

    // Partial Fisher-Yates: first shots+1 entries become the draw.
    std::vector<size_t> pool = candidates;
    for (int i = 0; i <= shots; ++i) {
      const size_t j = i + rng.uniform_u64(pool.size() - i);
      std::swap(pool[static_cast<size_t>(i)], pool[j]);
    }

    Episode ep;
    ep.target_class = target;
    ep.shot_count = shots;
    ep.fold = split.fold;
    bool valid = true;
    for (int i = 0; i <= shots && valid; ++i) {
      ImageSample s = resize_sample(
          binarize_to_class(dataset.item(pool[static_cast<size_t>(i)]), target), input_size);
      if (!has_foreground(s.mask)) {
        valid = false;  // object vanished (e.g. under extreme downscale)
        break;
      }
      if (i < shots)
        ep.supports.push_back(std::move(s));
      else
        ep.query = std::move(s);
    }
    if (!valid) continue;
    return ep;
  }
  throw std::runtime_error("sample_episode: failed to draw a valid episode");
}

}  // namespace frinet::data
