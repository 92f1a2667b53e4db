#pragma once

#include <array>
#include <vector>

#include "frinet/autodiff.hpp"
#include "frinet/nn.hpp"
#include "frinet/tensor.hpp"

// Rotation-invariant segmentation head: per-branch ASPP decoding into
// foreground/background logits, inverse rotation into the query frame,
// rotation-consistency and main losses, and complementary fusion.

namespace frinet::rothead {

using core::Tensor;
template <typename T>
using Var = core::ad::Var<T>;

inline constexpr std::array<int, 4> kAsppRates = {1, 6, 12, 18};

/// Two-channel logits in a fixed frame. Channel 0 is foreground, channel 1
/// background; `orientation` tags which branch produced them (-1 = fused).
template <typename T>
struct BranchLogits {
  Tensor<T> fg;
  Tensor<T> bg;
  int orientation = 0;

  static constexpr int kFused = -1;

  static BranchLogits from_tensor(const Tensor<T>& t, int orientation) {
    if (t.rank() != 3 || t.size(0) != 2)
      throw std::invalid_argument("BranchLogits: expected 2 x H x W");
    BranchLogits out;
    const int h = t.size(1);
    const int w = t.size(2);
    out.fg = Tensor<T>({h, w});
    out.bg = Tensor<T>({h, w});
    const long plane = static_cast<long>(h) * w;
    std::copy(t.data(), t.data() + plane, out.fg.data());
    std::copy(t.data() + plane, t.data() + 2 * plane, out.bg.data());
    out.orientation = orientation;
    return out;
  }

  Tensor<T> to_tensor() const {
    const int h = fg.size(0);
    const int w = fg.size(1);
    Tensor<T> t({2, h, w});
    const long plane = static_cast<long>(h) * w;
    std::copy(fg.data(), fg.data() + plane, t.data());
    std::copy(bg.data(), bg.data() + plane, t.data() + plane);
    return t;
  }
};

/// Decoding head shared across branches: conv block -> ASPP (atrous rates
/// {1,6,12,18} plus a global-pooling branch, concatenated and projected) ->
/// 1x1 conv to 2 channels -> bilinear upsample to the input resolution.
template <typename T>
struct DecodeHead {
  core::nn::Conv2d<T> conv_in;
  core::nn::InstanceNorm<T> norm_in;
  std::array<core::nn::Conv2d<T>, 4> atrous;
  std::array<core::nn::InstanceNorm<T>, 4> atrous_norm;
  core::nn::Conv2d<T> pool_proj;
  core::nn::Conv2d<T> proj;
  core::nn::InstanceNorm<T> proj_norm;
  core::nn::Conv2d<T> classifier;

  static DecodeHead create(core::nn::ParamStore<T>& store, const std::string& prefix,
                           int channels, int aspp_channels, uint64_t seed) {
    DecodeHead head;
    head.conv_in = core::nn::Conv2d<T>::create(store, prefix + ".conv_in", channels,
                                               channels, 3, 1, 1, 1, seed);
    head.norm_in = core::nn::InstanceNorm<T>::create(store, prefix + ".norm_in", channels);
    for (size_t i = 0; i < kAsppRates.size(); ++i) {
      const int rate = kAsppRates[i];
      head.atrous[i] = core::nn::Conv2d<T>::create(
          store, prefix + ".aspp" + std::to_string(rate), channels, aspp_channels, 3, 1,
          rate, rate, seed);
      head.atrous_norm[i] = core::nn::InstanceNorm<T>::create(
          store, prefix + ".aspp" + std::to_string(rate) + ".norm", aspp_channels);
    }
    head.pool_proj = core::nn::Conv2d<T>::create(store, prefix + ".pool_proj", channels,
                                                 aspp_channels, 1, 1, 0, 1, seed);
    head.proj = core::nn::Conv2d<T>::create(store, prefix + ".proj", 5 * aspp_channels,
                                            channels, 1, 1, 0, 1, seed);
    head.proj_norm = core::nn::InstanceNorm<T>::create(store, prefix + ".proj_norm", channels);
    head.classifier =
        core::nn::Conv2d<T>::create(store, prefix + ".classifier", channels, 2, 1, 1, 0, 1, seed);
    return head;
  }

  Var<T> operator()(core::nn::GraphBuild<T>& g, const Var<T>& activated, int out_h,
                    int out_w) const {
    auto x = conv_in(g, activated);
    x = norm_in(g, x);
    x = core::ad::relu(x);

    const int fh = x->value.size(1);
    const int fw = x->value.size(2);
    std::vector<Var<T>> branches;
    branches.reserve(5);
    for (size_t i = 0; i < kAsppRates.size(); ++i) {
      auto b = atrous[i](g, x);
      b = atrous_norm[i](g, b);
      branches.push_back(core::ad::relu(b));
    }
    auto pooled = core::ad::spatial_mean(x);
    pooled = pool_proj(g, pooled);
    pooled = core::ad::relu(pooled);
    branches.push_back(core::ad::broadcast_spatial(pooled, fh, fw));

    auto y = core::ad::concat_channels(branches);
    y = proj(g, y);
    y = proj_norm(g, y);
    y = core::ad::relu(y);
    y = classifier(g, y);
    return core::ad::bilinear_resize(y, out_h, out_w);
  }
};

/// Register branch logits back into the unrotated query frame.
template <typename T>
Var<T> unrotate_logits(const Var<T>& logits, int branch_angle) {
  if (branch_angle == 0) return logits;
  return core::ad::rotate90(logits, core::inverse_angle(branch_angle));
}

template <typename T>
BranchLogits<T> unrotate_logits(const BranchLogits<T>& logits) {
  BranchLogits<T> out;
  const int inv = core::inverse_angle(logits.orientation);
  out.fg = core::rotate_exact(logits.fg, inv);
  out.bg = core::rotate_exact(logits.bg, inv);
  out.orientation = 0;
  return out;
}

/// Sum over branches of the mean per-pixel 2-class cross-entropy against the
/// shared ground truth (branches already unrotated; the 0-degree branch is
/// included in the sum).
template <typename T>
Var<T> rotation_loss(const std::vector<Var<T>>& unrotated_branches,
                     const Tensor<uint8_t>& gt_mask) {
  if (unrotated_branches.empty())
    throw std::invalid_argument("rotation_loss: no branches");
  Var<T> total;
  for (const auto& branch : unrotated_branches) {
    auto ce = core::ad::masked_cross_entropy(branch, gt_mask);
    total = total ? core::ad::add(total, ce) : ce;
  }
  return total;
}

template <typename T>
Var<T> main_loss(const Var<T>& fused, const Tensor<uint8_t>& gt_mask) {
  return core::ad::masked_cross_entropy(fused, gt_mask);
}

template <typename T>
struct LossBundle {
  Var<T> loss_main;
  Var<T> loss_rotation;
  Var<T> loss_all;
  T mu{};

  T main_value() const { return loss_main->value[0]; }
  T rotation_value() const { return loss_rotation ? loss_rotation->value[0] : T{0}; }
  T all_value() const { return loss_all->value[0]; }
};

/// loss_all = loss_main + mu * loss_rotation, composed exactly in that order.
template <typename T>
LossBundle<T> total_loss(const Var<T>& main, const Var<T>& rotation, T mu) {
  if (mu < T{0}) throw std::invalid_argument("total_loss: mu must be nonnegative");
  LossBundle<T> bundle;
  bundle.loss_main = main;
  bundle.loss_rotation = rotation;
  bundle.mu = mu;
  bundle.loss_all = core::ad::add(main, core::ad::scale(rotation, mu));
  return bundle;
}

/// Complementary fusion: the branch foreground maps are concatenated and
/// passed through a 3x3 conv (n -> 1); the background maps go through a
/// separate conv of the same shape. Convs are initialized to center-tap
/// averaging so an untrained fusion reproduces the branch mean.
template <typename T>
struct FusionBlock {
  core::nn::Conv2d<T> fg_conv, bg_conv;
  int branch_count = 0;

  static FusionBlock create(core::nn::ParamStore<T>& store, const std::string& prefix,
                            int branch_count) {
    FusionBlock block;
    block.branch_count = branch_count;
    block.fg_conv = core::nn::Conv2d<T>::create(store, prefix + ".fg", branch_count, 1, 3,
                                                1, 1, 1, /*seed=*/0);
    block.bg_conv = core::nn::Conv2d<T>::create(store, prefix + ".bg", branch_count, 1, 3,
                                                1, 1, 1, /*seed=*/0);
    init_averaging(store, block);
    return block;
  }

  static void init_averaging(core::nn::ParamStore<T>& store, const FusionBlock& block) {
    for (const auto* conv : {&block.fg_conv, &block.bg_conv}) {
      auto& w = store.value(conv->w_name);
      w.fill(T{0});
      for (int i = 0; i < block.branch_count; ++i)
        w(0, i, 1, 1) = T{1} / static_cast<T>(block.branch_count);
      store.value(conv->b_name).fill(T{0});
    }
  }

  Var<T> operator()(core::nn::GraphBuild<T>& g,
                    const std::vector<Var<T>>& unrotated_branches) const {
    if (static_cast<int>(unrotated_branches.size()) != branch_count)
      throw std::invalid_argument("fuse_branches: expected " +
                                  std::to_string(branch_count) + " branches, got " +
                                  std::to_string(unrotated_branches.size()));
    std::vector<Var<T>> fgs, bgs;
    for (const auto& b : unrotated_branches) {
      if (!b->value.same_shape(unrotated_branches[0]->value))
        throw std::invalid_argument("fuse_branches: branch shape mismatch");
      fgs.push_back(core::ad::slice_channels(b, 0, 1));
      bgs.push_back(core::ad::slice_channels(b, 1, 1));
    }
    auto fg = fg_conv(g, fgs.size() == 1 ? fgs[0] : core::ad::concat_channels(fgs));
    auto bg = bg_conv(g, bgs.size() == 1 ? bgs[0] : core::ad::concat_channels(bgs));
    return core::ad::concat_channels<T>({fg, bg});
  }
};

/// Argmax decode: a pixel is foreground iff its fg logit >= bg logit.
template <typename T>
Tensor<uint8_t> predict_mask(const Tensor<T>& fused_logits) {
  if (fused_logits.rank() != 3 || fused_logits.size(0) != 2)
    throw std::invalid_argument("predict_mask: expected 2 x H x W");
  const int h = fused_logits.size(1);
  const int w = fused_logits.size(2);
  const long plane = static_cast<long>(h) * w;
  Tensor<uint8_t> mask({h, w});
  for (long i = 0; i < plane; ++i)
    mask[i] = fused_logits[i] >= fused_logits[plane + i] ? 1 : 0;
  return mask;
}

}  // namespace frinet::rothead
