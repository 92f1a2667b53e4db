#include "frinet/pretrain.hpp"

#include <algorithm>
#include <array>

#include "frinet/logging.hpp"
#include "frinet/parallel.hpp"
#include "frinet/serialize.hpp"

namespace frinet::backbone {

namespace {

using core::Tensor;
using core::ad::Var;

constexpr std::array<int, 4> kPyramidBins = {1, 2, 3, 6};

/// Pyramid-pooling segmentation head used only during pretraining.
struct PyramidHead {
  std::array<core::nn::Conv2d<float>, 4> bin_proj;
  core::nn::Conv2d<float> merge;
  core::nn::InstanceNorm<float> merge_norm;
  core::nn::Conv2d<float> classifier;
  int reduced = 0;

  static PyramidHead create(core::nn::ParamStore<float>& store, int channels,
                            int num_classes, uint64_t seed) {
    PyramidHead head;
    head.reduced = std::max(1, channels / 4);
    for (size_t i = 0; i < kPyramidBins.size(); ++i)
      head.bin_proj[i] = core::nn::Conv2d<float>::create(
          store, "psp.bin" + std::to_string(kPyramidBins[i]), channels, head.reduced, 1, 1,
          0, 1, seed);
    head.merge = core::nn::Conv2d<float>::create(
        store, "psp.merge", channels + 4 * head.reduced, channels, 3, 1, 1, 1, seed);
    head.merge_norm = core::nn::InstanceNorm<float>::create(store, "psp.merge_norm", channels);
    head.classifier = core::nn::Conv2d<float>::create(store, "psp.classifier", channels,
                                                      num_classes, 1, 1, 0, 1, seed);
    return head;
  }

  Var<float> operator()(core::nn::GraphBuild<float>& g, const Var<float>& features,
                        int out_h, int out_w) const {
    const int fh = features->value.size(1);
    const int fw = features->value.size(2);
    std::vector<Var<float>> parts{features};
    for (size_t i = 0; i < kPyramidBins.size(); ++i) {
      const int bins = std::min({kPyramidBins[i], fh, fw});
      auto pooled = core::ad::adaptive_avg_pool(features, bins);
      pooled = bin_proj[i](g, pooled);
      pooled = core::ad::relu(pooled);
      parts.push_back(core::ad::bilinear_resize(pooled, fh, fw));
    }
    auto x = core::ad::concat_channels(parts);
    x = merge(g, x);
    x = merge_norm(g, x);
    x = core::ad::relu(x);
    x = classifier(g, x);
    return core::ad::bilinear_resize(x, out_h, out_w);
  }
};

}  // namespace

Tensor<uint8_t> build_pretrain_target(const Tensor<uint8_t>& mask,
                                      const data::SplitConfig& split) {
  Tensor<uint8_t> target(mask.shape());
  for (long i = 0; i < mask.numel(); ++i) {
    const uint8_t v = mask[i];
    if (v == 255) {
      target[i] = 255;
      continue;
    }
    if (v == 0) {
      target[i] = 0;
      continue;
    }
    const auto it = std::find(split.base_classes.begin(), split.base_classes.end(), v);
    target[i] = it == split.base_classes.end()
                    ? 0  // novel or unknown: background
                    : static_cast<uint8_t>(1 + (it - split.base_classes.begin()));
  }
  return target;
}

void audit_pretrain_target(const Tensor<uint8_t>& raw_mask, const Tensor<uint8_t>& target,
                           const data::SplitConfig& split) {
  if (raw_mask.shape() != target.shape())
    throw std::invalid_argument("audit_pretrain_target: shape mismatch");
  const int num_base = static_cast<int>(split.base_classes.size());
  for (long i = 0; i < raw_mask.numel(); ++i) {
    const uint8_t t = target[i];
    if (t == 255) continue;
    if (t > num_base)
      throw std::runtime_error("pretraining audit: target label " + std::to_string(t) +
                               " exceeds the base-class count");
    if (t != 0 && split.is_novel(raw_mask[i]))
      throw std::runtime_error(
          "pretraining audit: novel-class pixel labeled as foreground (class " +
          std::to_string(raw_mask[i]) + ")");
  }
}

PretrainResult pretrain_on_base(const data::Dataset& dataset,
                                const data::SplitConfig& split,
                                const PretrainConfig& config, const std::string& out_path,
                                int workers) {
  split.validate();
  const int num_classes = static_cast<int>(split.base_classes.size()) + 1;

  // Images containing at least one base-class pixel, with novel relabeled to
  // background; every target is audited before use.
  struct Example {
    Tensor<float> image;
    Tensor<uint8_t> target;
  };
  std::vector<Example> examples;
  for (size_t i = 0; i < dataset.size(); ++i) {
    const auto& item = dataset.item(i);
    bool has_base = false;
    for (int c : split.base_classes)
      if (item.classes.count(c)) {
        has_base = true;
        break;
      }
    if (!has_base) continue;
    Example ex;
    ex.image = item.image.size(1) == config.input_size
                   ? item.image
                   : core::resize_bilinear(item.image, config.input_size, config.input_size);
    Tensor<uint8_t> mask = item.mask.size(0) == config.input_size
                               ? item.mask
                               : core::resize_nearest(item.mask, config.input_size,
                                                      config.input_size);
    ex.target = build_pretrain_target(mask, split);
    audit_pretrain_target(mask, ex.target, split);
    examples.push_back(std::move(ex));
  }
  if (examples.empty())
    throw std::runtime_error("pretrain_on_base: no base-class images for fold " +
                             std::to_string(split.fold));

  auto bb = Backbone<float>::random(Architecture::toy(config.backbone_channels),
                                    core::derive_seed(config.seed, "backbone-init"));
  core::nn::ParamStore<float> head_store;
  PyramidHead head = PyramidHead::create(head_store, bb.arch().channels(), num_classes,
                                         core::derive_seed(config.seed, "psp-init"));

  const long steps_per_epoch =
      std::max<long>(1, static_cast<long>(examples.size()) / config.batch_size);
  const long max_iter = static_cast<long>(config.epochs) * steps_per_epoch;

  PretrainResult result;
  long global_step = 0;
  std::vector<size_t> order(examples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    core::Rng shuffle_rng(core::derive_seed(config.seed, "pretrain-shuffle",
                                            static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(order.begin(), order.end());

    double epoch_loss = 0;
    long counted = 0;
    uint64_t correct = 0, valid = 0;
    const bool final_epoch = epoch == config.epochs;

    for (long step = 0; step < steps_per_epoch; ++step) {
      const int batch =
          static_cast<int>(std::min<size_t>(config.batch_size,
                                            examples.size() - step * config.batch_size));
      if (batch <= 0) break;

      struct SlotResult {
        std::map<std::string, Tensor<float>> bb_grads, head_grads;
        std::vector<core::nn::NormStats<float>> norm_stats;
        double loss = 0;
        uint64_t correct = 0, valid = 0;
      };
      std::vector<SlotResult> slots(static_cast<size_t>(batch));
      core::parallel_for(batch, workers, [&](long b) {
        const auto& ex = examples[order[static_cast<size_t>(step * config.batch_size + b)]];
        core::nn::GraphBuild<float> g_bb(bb.params(), /*train=*/true);
        core::nn::GraphBuild<float> g_head(head_store, /*train=*/true);
        auto feat = bb.forward(g_bb, core::ad::constant(ex.image),
                               &slots[static_cast<size_t>(b)].norm_stats);
        auto logits = head(g_head, feat, config.input_size, config.input_size);
        auto loss = core::ad::masked_cross_entropy_multi(logits, ex.target);
        core::ad::backward(loss);
        auto& slot = slots[static_cast<size_t>(b)];
        slot.loss = loss->value[0];
        g_bb.accumulate_grads(slot.bb_grads, 1.0f / static_cast<float>(batch));
        g_head.accumulate_grads(slot.head_grads, 1.0f / static_cast<float>(batch));
        if (final_epoch) {
          const auto& lv = logits->value;
          const long plane = static_cast<long>(config.input_size) * config.input_size;
          for (long i = 0; i < plane; ++i) {
            if (ex.target[i] == 255) continue;
            int best = 0;
            for (int k = 1; k < num_classes; ++k)
              if (lv[k * plane + i] > lv[best * plane + i]) best = k;
            ++slot.valid;
            if (best == ex.target[i]) ++slot.correct;
          }
        }
      });

      std::map<std::string, Tensor<float>> bb_total, head_total;
      for (const auto& slot : slots)
        core::nn::fold_norm_stats(bb.params(), slot.norm_stats);
      for (const auto& slot : slots) {
        for (const auto& [name, g] : slot.bb_grads) {
          auto it = bb_total.find(name);
          if (it == bb_total.end())
            bb_total.emplace(name, g);
          else
            for (long i = 0; i < g.numel(); ++i) it->second[i] += g[i];
        }
        for (const auto& [name, g] : slot.head_grads) {
          auto it = head_total.find(name);
          if (it == head_total.end())
            head_total.emplace(name, g);
          else
            for (long i = 0; i < g.numel(); ++i) it->second[i] += g[i];
        }
        epoch_loss += slot.loss;
        ++counted;
        correct += slot.correct;
        valid += slot.valid;
      }

      const double lr = core::nn::poly_lr(config.learning_rate, global_step, max_iter);
      core::nn::sgd_step(bb.params(), bb_total, static_cast<float>(lr),
                         static_cast<float>(config.momentum));
      core::nn::sgd_step(head_store, head_total, static_cast<float>(lr),
                         static_cast<float>(config.momentum));
      ++global_step;
    }

    result.epoch_losses.push_back(epoch_loss / std::max<long>(1, counted));
    core::log_info(core::strfmt("pretrain epoch %d/%d loss %.4f", epoch, config.epochs,
                                result.epoch_losses.back()));
    if (final_epoch && valid > 0)
      result.pixel_accuracy = static_cast<double>(correct) / static_cast<double>(valid);
  }

  BackboneSpec spec;
  spec.pretrain_fold = split.fold;
  spec.pixel_accuracy = result.pixel_accuracy;
  save_backbone(bb, out_path, spec);  // head discarded
  result.spec = read_backbone_sidecar(out_path);
  return result;
}

}  // namespace frinet::backbone
