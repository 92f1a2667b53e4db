#pragma once

#include <string>
#include <vector>

#include "frinet/nn.hpp"
#include "frinet/serialize.hpp"
#include "frinet/tensor.hpp"

namespace frinet::backbone {

using core::Tensor;

struct ConvBlockSpec {
  int out_channels = 64;
  int stride = 1;
  int pad = 1;
  int kernel = 3;
};

/// A stack of conv -> channel-norm -> relu blocks.
struct Architecture {
  std::string name;
  int in_channels = 3;
  std::vector<ConvBlockSpec> blocks;

  int channels() const { return blocks.back().out_channels; }
  int stride() const {
    int s = 1;
    for (const auto& b : blocks) s *= b.stride;
    return s;
  }

  /// The reference extractor: four 3x3 blocks, two stride-2 downsamples,
  /// overall stride 4. Name encodes channels and stride, e.g. "toy4-c64-s4".
  static Architecture toy(int channels = 64);

  /// Resolve an architecture by its name (used when loading weight files).
  static Architecture by_name(const std::string& name);
};

/// Sidecar metadata stored next to a weight container.
struct BackboneSpec {
  std::string name;
  int channels = 0;
  int stride = 0;
  bool frozen = true;
  std::string weights_uri;
  std::string weight_checksum;
  std::string probe_feature_hash;
  int pretrain_fold = -1;
  double pixel_accuracy = -1.0;
};

/// Dense feature grid produced by an extractor.
template <typename T>
struct FeatureMap {
  Tensor<T> data;  // C x H' x W'
  int stride = 1;
  int channels = 0;
};

template <typename T>
class Backbone {
 public:
  /// Explicit random initialization (a legitimate starting point for
  /// pretraining or a deliberately untrained control arm).
  static Backbone random(const Architecture& arch, uint64_t seed) {
    Backbone b(arch, seed);
    b.ready_ = true;
    return b;
  }

  /// Shell without usable weights; extract() refuses until weights arrive.
  static Backbone uninitialized(const Architecture& arch) { return Backbone(arch, 0); }

  const Architecture& arch() const { return arch_; }
  core::nn::ParamStore<T>& params() { return params_; }
  const core::nn::ParamStore<T>& params() const { return params_; }
  bool weights_ready() const { return ready_; }
  void mark_ready() { ready_ = true; }

  uint64_t weights_checksum() const { return core::params_checksum(params_); }

  /// Build the forward graph. A non-null stat sink switches the norm layers
  /// to training statistics (pretraining); callers fold the sink into the
  /// running buffers afterwards, in a deterministic order.
  core::ad::Var<T> forward(core::nn::GraphBuild<T>& g, const core::ad::Var<T>& image,
                           std::vector<core::nn::NormStats<T>>* stat_sink = nullptr) const {
    auto x = image;
    for (size_t i = 0; i < convs_.size(); ++i) {
      x = convs_[i](g, x);
      x = norms_[i](g, x, stat_sink);
      x = core::ad::relu(x);
    }
    return x;
  }

  /// Frozen deterministic extraction (inference mode, stored norm stats).
  FeatureMap<T> extract(const Tensor<T>& image) const {
    if (!ready_)
      throw std::runtime_error(
          "backbone: weights not loaded; refusing to extract with uninitialized filters");
    if (image.rank() != 3 || image.size(0) != arch_.in_channels)
      throw std::invalid_argument("backbone: image must be " +
                                  std::to_string(arch_.in_channels) + " x H x W");
    auto& self = const_cast<Backbone&>(*this);
    core::nn::GraphBuild<T> g(self.params_, /*train=*/false);
    auto out = forward(g, core::ad::constant(image));
    if (!core::all_finite(out->value))
      throw std::runtime_error("backbone: non-finite features");
    FeatureMap<T> fm;
    fm.data = out->value;
    fm.stride = arch_.stride();
    fm.channels = arch_.channels();
    return fm;
  }

 private:
  Backbone(const Architecture& arch, uint64_t seed) : arch_(arch) {
    for (size_t i = 0; i < arch.blocks.size(); ++i) {
      const auto& blk = arch.blocks[i];
      const int in_ch = i == 0 ? arch.in_channels : arch.blocks[i - 1].out_channels;
      const std::string prefix = "backbone.block" + std::to_string(i);
      convs_.push_back(core::nn::Conv2d<T>::create(params_, prefix + ".conv", in_ch,
                                                   blk.out_channels, blk.kernel, blk.stride,
                                                   blk.pad, /*dilation=*/1, seed));
      norms_.push_back(core::nn::ChannelNorm<T>::create(params_, prefix + ".norm",
                                                        blk.out_channels));
    }
  }

  Architecture arch_;
  core::nn::ParamStore<T> params_;
  std::vector<core::nn::Conv2d<T>> convs_;
  std::vector<core::nn::ChannelNorm<T>> norms_;
  bool ready_ = false;
};

/// Deterministic probe image used for the stored golden feature hash.
core::Tensor<float> probe_image(int channels, int size);

uint64_t feature_hash(const core::Tensor<float>& features);

/// Write weights plus the JSON sidecar (path + ".json").
void save_backbone(const Backbone<float>& backbone, const std::string& path,
                   BackboneSpec spec);

BackboneSpec read_backbone_sidecar(const std::string& path);

/// Load and validate: sidecar vs architecture, checksum, golden probe hash.
std::pair<Backbone<float>, BackboneSpec> load_backbone(const std::string& path,
                                                       bool verify_probe = true);

}  // namespace frinet::backbone
