#pragma once

#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "frinet/backbone.hpp"
#include "frinet/dataset.hpp"
#include "frinet/rothead.hpp"
#include "frinet/rotmatch.hpp"

namespace frinet::engine {

using core::Tensor;
template <typename T>
using Var = core::ad::Var<T>;

struct ModelConfig {
  int feature_channels = 64;
  int aspp_channels = 32;
  std::vector<int> orientations = {0, 90, 180, 270};
  uint64_t init_seed = 0;

  void validate() const {
    if (orientations.empty() || orientations.front() != 0)
      throw std::invalid_argument("ModelConfig: orientations must start with 0");
    std::vector<int> seen;
    for (int a : orientations) {
      core::orientation_index(a);  // rejects non-multiples of 90
      for (int s : seen)
        if (s == a) throw std::invalid_argument("ModelConfig: duplicate orientation");
      seen.push_back(a);
    }
  }
};

/// The learnable parts: matcher activation block, decoding head, fusion.
/// Backbone parameters live elsewhere and are never touched by training.
template <typename T>
class FrinetModel {
 public:
  explicit FrinetModel(const ModelConfig& config) : config_(config) {
    config_.validate();
    activation_ = rotmatch::ActivationBlock<T>::create(
        params_, "matcher.activation", config.feature_channels, config.init_seed);
    head_ = rothead::DecodeHead<T>::create(params_, "head", config.feature_channels,
                                           config.aspp_channels, config.init_seed);
    fusion_ = rothead::FusionBlock<T>::create(
        params_, "fusion", static_cast<int>(config.orientations.size()));
  }

  const ModelConfig& config() const { return config_; }
  core::nn::ParamStore<T>& params() { return params_; }
  const core::nn::ParamStore<T>& params() const { return params_; }
  const rotmatch::ActivationBlock<T>& activation() const { return activation_; }
  const rothead::DecodeHead<T>& head() const { return head_; }
  const rothead::FusionBlock<T>& fusion() const { return fusion_; }

 private:
  ModelConfig config_;
  core::nn::ParamStore<T> params_;
  rotmatch::ActivationBlock<T> activation_;
  rothead::DecodeHead<T> head_;
  rothead::FusionBlock<T> fusion_;
};

/// Cache of frozen-backbone features keyed by (image id, flip, rotation).
/// Extraction is a pure function of the weights and pixels, so concurrent
/// fills are benign. Samples without an id are never cached.
template <typename T>
class FeatureCache {
 public:
  explicit FeatureCache(const backbone::Backbone<T>& bb) : backbone_(&bb) {}

  Tensor<T> features(const data::ImageSample& sample) {
    if (sample.id.empty()) return extract(sample);
    const std::string key = sample.id + (sample.flipped ? "|f|r" : "|n|r") +
                            std::to_string(sample.pre_rotation);
    {
      std::lock_guard<std::mutex> lock(mutex_);
      auto it = map_.find(key);
      if (it != map_.end()) return *it->second;
    }
    auto value = std::make_shared<Tensor<T>>(extract(sample));
    {
      std::lock_guard<std::mutex> lock(mutex_);
      map_.emplace(key, value);
    }
    return *value;
  }

  size_t size() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return map_.size();
  }
  void clear() {
    std::lock_guard<std::mutex> lock(mutex_);
    map_.clear();
  }

 private:
  Tensor<T> extract(const data::ImageSample& sample) const {
    if constexpr (std::is_same_v<T, float>) {
      return backbone_->extract(sample.image).data;
    } else {
      return backbone_->extract(sample.image.template cast<T>()).data;
    }
  }

  const backbone::Backbone<T>* backbone_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, std::shared_ptr<Tensor<T>>> map_;
};

template <typename T>
struct EpisodeForward {
  std::vector<int> angles;
  std::vector<Var<T>> prototypes;     // per orientation, C x 1 x 1
  std::vector<Var<T>> scores;         // per branch, n x H' x W' (pre-softmax)
  std::vector<Var<T>> relations;      // per branch, n x H' x W' (column-stochastic)
  std::vector<Var<T>> branch_logits;  // per branch, unrotated into query frame
  Var<T> fused;                       // 2 x H x W
};

/// The full pipeline for one episode: rotate support and query per configured
/// orientation, extract frozen features, pool orientation prototypes
/// (averaged over shots), match every query branch against the whole
/// prototype set, decode, unrotate and fuse.
template <typename T>
EpisodeForward<T> forward_episode(const data::Episode& episode, FrinetModel<T>& model,
                                  FeatureCache<T>& cache, core::nn::GraphBuild<T>& g) {
  using core::ad::check_finite;
  const auto& angles = model.config().orientations;
  EpisodeForward<T> out;
  out.angles = angles;

  if (episode.supports.empty()) throw std::invalid_argument("forward_episode: no supports");
  const int shots = static_cast<int>(episode.supports.size());

  for (int a : angles) {
    Var<T> sum;
    for (const auto& shot : episode.supports) {
      const data::ImageSample rotated = data::rotate_sample(shot, a);
      auto feat = core::ad::constant(cache.features(rotated));
      auto proto = rotmatch::masked_average_pool(feat, rotated.mask);
      sum = sum ? core::ad::add(sum, proto) : proto;
    }
    if (shots > 1) sum = core::ad::scale(sum, T{1} / static_cast<T>(shots));
    check_finite(sum, "prototypes");
    out.prototypes.push_back(sum);
  }

  for (int b : angles) {
    const data::ImageSample rotated_query = data::rotate_sample(episode.query, b);
    auto query_feat = core::ad::constant(cache.features(rotated_query));
    check_finite(query_feat, "extract_features");

    auto scores = rotmatch::relation_scores(query_feat, out.prototypes);
    check_finite(scores, "relation_scores");
    auto relations = rotmatch::relation_softmax(scores);
    auto matching = rotmatch::aggregate_matching_features(out.prototypes, relations);
    auto activated = model.activation()(g, matching, query_feat);
    check_finite(activated, "activate_query");
    auto logits = model.head()(g, activated, rotated_query.image.size(1),
                               rotated_query.image.size(2));
    check_finite(logits, "decode_branch");
    out.scores.push_back(scores);
    out.relations.push_back(relations);
    out.branch_logits.push_back(rothead::unrotate_logits(logits, b));
  }

  out.fused = model.fusion()(g, out.branch_logits);
  check_finite(out.fused, "fuse_branches");
  return out;
}

/// Loss composition for one forward pass.
template <typename T>
rothead::LossBundle<T> episode_losses(const EpisodeForward<T>& forward,
                                      const Tensor<uint8_t>& gt_mask, T mu) {
  auto main = rothead::main_loss(forward.fused, gt_mask);
  auto rotation = rothead::rotation_loss(forward.branch_logits, gt_mask);
  return rothead::total_loss(main, rotation, mu);
}

}  // namespace frinet::engine
