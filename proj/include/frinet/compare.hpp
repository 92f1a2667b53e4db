#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "frinet/engine.hpp"

namespace frinet::evaluation {

enum class CompareMode { kBaseline, kRotationAug, kFrinet, kOrientationSweep };

CompareMode compare_mode_from_string(const std::string& name);
std::string to_string(CompareMode mode);

/// One experimental arm: a named override of the method knobs. Seeds and
/// backbones are fixed by the harness; overrides of either are refused so
/// every arm sees identical conditions.
struct ArmSpec {
  std::string name;
  std::vector<int> orientations;
  double mu = 0.25;
  bool rotation_augment = false;
  std::optional<uint64_t> seed_override;
  std::optional<std::string> backbone_override;
};

struct CompareConfig {
  const data::Dataset* dataset = nullptr;
  std::vector<data::SplitConfig> folds;
  std::vector<uint64_t> seeds;
  engine::TrainConfig base_config;
  int shots = 1;
  int eval_episodes = 200;
  uint64_t eval_seed = 9001;
  std::map<int, std::string> backbone_per_fold;  // fold -> weights path
  int workers = 1;
  std::string out_dir;  // optional: comparison.md / comparison.csv
};

struct CompareRow {
  std::string arm;
  int fold = 0;
  uint64_t seed = 0;
  double miou = 0.0;
  std::string episodes_digest;
};

struct CompareReport {
  CompareMode mode{};
  std::vector<CompareRow> rows;
  std::vector<std::string> arm_order;
  std::map<std::string, double> mean_by_arm;
};

std::vector<ArmSpec> arms_for_mode(CompareMode mode, const engine::TrainConfig& base);

/// Run every arm end to end over the configured folds and seeds with a shared
/// backbone and shared evaluation episodes, and tabulate mIoU side by side.
CompareReport compare_harness(CompareMode mode, const CompareConfig& config);

std::string comparison_to_markdown(const CompareReport& report);
std::string comparison_to_csv(const CompareReport& report);

}  // namespace frinet::evaluation
