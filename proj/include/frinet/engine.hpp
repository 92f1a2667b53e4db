#pragma once

#include <optional>
#include <string>
#include <vector>

#include "frinet/metrics.hpp"
#include "frinet/model.hpp"

namespace frinet::engine {

/// Episodic training configuration. Defaults follow the reference schedule:
/// SGD at 5e-3 with momentum 0.9, batches of 4 episodes, 100 epochs for
/// 1-shot and 50 for 5-shot, mu 0.25, 256x256 inputs, horizontal flips.
struct TrainConfig {
  double learning_rate = 5e-3;
  int batch_size = 4;
  int epochs_1shot = 100;
  int epochs_5shot = 50;
  double mu = 0.25;
  std::string optimizer = "sgd";
  double momentum = 0.9;
  uint64_t seed = 0;
  std::vector<int> orientations = {0, 90, 180, 270};
  int input_size = 256;
  bool flip_augment = true;
  bool rotation_augment = false;
  int aspp_channels = 32;

  void validate() const;
  int epochs_for_shots(int shots) const { return shots == 1 ? epochs_1shot : epochs_5shot; }

  /// Flat key=value round trip.
  static TrainConfig from_file(const std::string& path);
  static TrainConfig from_text(const std::string& text);
  std::string to_text() const;
  std::string digest() const;
};

struct EpochStats {
  int epoch = 0;
  double loss_all = 0.0;
  double loss_main = 0.0;
  double loss_rotation = 0.0;
};

struct RngState {
  uint64_t master_seed = 0;
  long steps_done = 0;
};

struct TrainResult {
  std::string checkpoint_path;  // empty when nothing was persisted
  std::vector<EpochStats> epochs;
  bool diverged = false;
  int shots = 1;
  RngState rng_state;
  uint64_t backbone_checksum_before = 0;
  uint64_t backbone_checksum_after = 0;
};

/// Episodic SGD over base classes with the frozen backbone. Emits a
/// checkpoint per epoch under out_dir (if non-empty); on divergence the last
/// epoch-boundary parameters are restored.
TrainResult train(const data::Dataset& dataset, const data::SplitConfig& split,
                  const TrainConfig& config, int shots,
                  const backbone::Backbone<float>& bb, FrinetModel<float>& model,
                  const std::string& out_dir, int workers);

/// Convenience wrapper: loads the backbone, builds the model, trains, saves.
TrainResult train_from_files(const std::string& dataset_root, int fold,
                             const TrainConfig& config, int shots,
                             const std::string& backbone_path, const std::string& out_dir,
                             int workers);

struct EvalOptions {
  int num_episodes = 1000;
  uint64_t seed = 0;
  int shots = 1;
  int workers = 1;
  bool per_episode_mean = false;
  std::string dump_relations_dir;
  std::string dump_branches_dir;
  std::string dump_masks_dir;
  std::string visuals_dir;
};

/// Deterministic novel-class evaluation; returns the metrics report.
evaluation::EvalReport evaluate(const data::Dataset& dataset,
                                const data::SplitConfig& split, const TrainConfig& config,
                                FrinetModel<float>& model,
                                const backbone::Backbone<float>& bb,
                                const EvalOptions& options);

// --- checkpoints -----------------------------------------------------------

struct CheckpointMeta {
  TrainConfig config;
  ModelConfig model_config;
  int epoch = 0;
  int shots = 1;
  std::string backbone_path;
  std::string backbone_checksum;
  std::vector<EpochStats> metric_log;
  RngState rng_state;
};

void save_checkpoint(const std::string& path, const FrinetModel<float>& model,
                     const CheckpointMeta& meta);

CheckpointMeta read_checkpoint_meta(const std::string& path);

/// Rebuilds the model from the sidecar and restores parameters bit-exactly.
std::pair<std::unique_ptr<FrinetModel<float>>, CheckpointMeta> load_checkpoint(
    const std::string& path);

ModelConfig model_config_from(const TrainConfig& config, int feature_channels);

}  // namespace frinet::engine
