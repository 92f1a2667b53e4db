#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "frinet/tensor.hpp"

namespace frinet::evaluation {

using core::Tensor;

/// Per-class intersection/union pixel tallies pooled across episodes.
/// Accumulators are mergeable; merge order does not affect the counts.
struct ConfusionAccumulator {
  struct Counts {
    uint64_t intersection = 0;
    uint64_t unions = 0;
    uint64_t episodes = 0;
    double episode_iou_sum = 0.0;  // for the per-episode-mean variant
  };
  std::map<int, Counts> per_class;

  void accumulate(const Tensor<uint8_t>& predicted, const Tensor<uint8_t>& gt,
                  int class_id);
  void merge(const ConfusionAccumulator& other);
};

struct EvalReport {
  std::map<int, double> per_class_iou;
  double miou = 0.0;
  int fold = 0;
  int shots = 0;
  int num_episodes = 0;
  std::string config_digest;
  std::string episodes_digest;
  std::string status = "ok";  // "ok" | "no_episodes"
  std::vector<int> skipped_classes;
  bool per_episode_mean = false;
};

/// Pooled-count IoU per class (or the per-episode mean behind the flag);
/// classes with an empty union are excluded with a warning.
EvalReport finalize(const ConfusionAccumulator& acc, int fold, int shots,
                    int num_episodes, const std::string& config_digest,
                    const std::string& episodes_digest, bool per_episode_mean = false);

/// Canonical JSON: sorted keys, fixed 6-decimal floats; byte-stable.
std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);

void write_report(const std::string& path, const EvalReport& report);
EvalReport read_report(const std::string& path);

std::string report_to_csv(const EvalReport& report);
std::string report_to_markdown(const EvalReport& report);

}  // namespace frinet::evaluation
