#pragma once

#include <vector>

#include "frinet/autodiff.hpp"
#include "frinet/logging.hpp"
#include "frinet/nn.hpp"
#include "frinet/tensor.hpp"

// Rotation-adaptive matching: orientation-varying prototypes pooled from
// support features, per-pixel cosine relation scores against the query,
// softmax weighting, and soft aggregation into matching features that
// activate the query.

namespace frinet::rotmatch {

using core::OrientationSet;
using core::Tensor;
template <typename T>
using Var = core::ad::Var<T>;

inline constexpr double kPoolEps = 1e-6;
inline constexpr double kNormFloor = 1e-8;

/// Nearest-neighbour downsample of a {0,1,255} label grid to feature
/// resolution, as a 0/1 foreground indicator (ignore counts as 0).
template <typename T>
Tensor<T> foreground_indicator(const Tensor<uint8_t>& mask, int out_h, int out_w) {
  const Tensor<uint8_t> small = core::resize_nearest(mask, out_h, out_w);
  Tensor<T> out({out_h, out_w});
  for (long i = 0; i < small.numel(); ++i) out[i] = small[i] == 1 ? T{1} : T{0};
  return out;
}

/// Masked average pooling of features against a full-resolution mask.
/// A mask that becomes empty at feature resolution falls back to global
/// average pooling (logged); tiny objects never produce NaN prototypes.
template <typename T>
Var<T> masked_average_pool(const Var<T>& features, const Tensor<uint8_t>& mask,
                           bool* used_fallback = nullptr) {
  const int h = features->value.size(1);
  const int w = features->value.size(2);
  Tensor<T> indicator = foreground_indicator<T>(mask, h, w);
  T msum{0};
  for (long i = 0; i < indicator.numel(); ++i) msum += indicator[i];
  if (msum == T{0}) {
    core::log_warn("masked_average_pool: mask empty at feature resolution, "
                   "falling back to global average pooling");
    if (used_fallback) *used_fallback = true;
    indicator.fill(T{1});
  } else if (used_fallback) {
    *used_fallback = false;
  }
  return core::ad::masked_mean_pool(features, indicator, static_cast<T>(kPoolEps));
}

/// Per-orientation masked average pooling. Masks must be the correspondingly
/// rotated versions of the support mask.
template <typename T>
OrientationSet<Var<T>> orientation_prototypes(const OrientationSet<Var<T>>& features,
                                              const OrientationSet<Tensor<uint8_t>>& masks) {
  OrientationSet<Var<T>> protos;
  for (int a : core::kOrientations)
    protos.at(a) = masked_average_pool(features.at(a), masks.at(a));
  return protos;
}

/// Cosine similarity between every prototype and every query pixel:
/// -> n x H' x W' score maps in [-1, 1], prototype-major order.
template <typename T>
Var<T> relation_scores(const Var<T>& query, const std::vector<Var<T>>& prototypes) {
  if (prototypes.empty())
    throw std::invalid_argument("relation_scores: need at least one prototype");
  std::vector<Var<T>> maps;
  maps.reserve(prototypes.size());
  for (const auto& p : prototypes)
    maps.push_back(core::ad::cosine_map(p, query, static_cast<T>(kNormFloor)));
  return maps.size() == 1 ? maps[0] : core::ad::concat_channels(maps);
}

/// Per-pixel softmax over the orientation axis. Raw cosine logits, no
/// temperature.
template <typename T>
Var<T> relation_softmax(const Var<T>& scores) {
  return core::ad::channel_softmax(scores);
}

/// Matching features: per-pixel convex combination of the prototypes under
/// the relation weights, i.e. the (C x n) x (n x H'W') product.
template <typename T>
Var<T> aggregate_matching_features(const std::vector<Var<T>>& prototypes,
                                   const Var<T>& relations) {
  return core::ad::aggregate_prototypes(prototypes, relations);
}

/// Learnable activation block shared across the orientation branches:
/// concat(matching, query) -> 3x3 conv -> norm -> relu -> 3x3 conv.
template <typename T>
struct ActivationBlock {
  core::nn::Conv2d<T> conv1, conv2;
  core::nn::InstanceNorm<T> norm;

  static ActivationBlock create(core::nn::ParamStore<T>& store, const std::string& prefix,
                                int channels, uint64_t seed) {
    ActivationBlock block;
    block.conv1 = core::nn::Conv2d<T>::create(store, prefix + ".conv1", 2 * channels,
                                              channels, 3, 1, 1, 1, seed);
    block.norm = core::nn::InstanceNorm<T>::create(store, prefix + ".norm", channels);
    block.conv2 = core::nn::Conv2d<T>::create(store, prefix + ".conv2", channels, channels,
                                              3, 1, 1, 1, seed);
    return block;
  }

  Var<T> operator()(core::nn::GraphBuild<T>& g, const Var<T>& matching,
                    const Var<T>& query) const {
    if (!matching->value.same_shape(query->value))
      throw std::invalid_argument("activate_query: matching/query shape mismatch");
    auto x = core::ad::concat_channels<T>({matching, query});
    x = conv1(g, x);
    x = norm(g, x);
    x = core::ad::relu(x);
    return conv2(g, x);
  }
};

}  // namespace frinet::rotmatch
