#pragma once

#include <string>
#include <vector>

#include "frinet/backbone.hpp"
#include "frinet/dataset.hpp"

namespace frinet::backbone {

/// Base-stage segmentation pretraining schedule. The reference schedule is
/// an artifact default, kept in config rather than asserted.
struct PretrainConfig {
  double learning_rate = 0.02;
  double momentum = 0.9;
  int batch_size = 4;
  int epochs = 5;
  uint64_t seed = 0;
  int input_size = 64;
  int backbone_channels = 64;
};

struct PretrainResult {
  BackboneSpec spec;
  std::vector<double> epoch_losses;
  double pixel_accuracy = 0.0;
};

/// Remap a raw label grid into the (|base|+1)-way pretraining target:
/// 0 background, 1..B the fold's base classes in order, 255 ignore.
/// Novel-class pixels map to background so the stage never observes them as
/// foreground.
core::Tensor<uint8_t> build_pretrain_target(const core::Tensor<uint8_t>& mask,
                                            const data::SplitConfig& split);

/// Audit: fatal if any pixel whose raw label is a novel class carries a
/// foreground label in the target, or if a target index does not correspond
/// to a base class.
void audit_pretrain_target(const core::Tensor<uint8_t>& raw_mask,
                           const core::Tensor<uint8_t>& target,
                           const data::SplitConfig& split);

/// Train backbone + pyramid-pooling head on (|base|+1)-way pixel
/// classification over base-class images, persist the frozen backbone (head
/// discarded) and return its spec with the final training pixel accuracy.
PretrainResult pretrain_on_base(const data::Dataset& dataset,
                                const data::SplitConfig& split,
                                const PretrainConfig& config, const std::string& out_path,
                                int workers);

}  // namespace frinet::backbone
