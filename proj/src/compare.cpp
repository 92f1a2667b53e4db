#include "frinet/compare.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "frinet/logging.hpp"

namespace fs = std::filesystem;

namespace frinet::evaluation {

CompareMode compare_mode_from_string(const std::string& name) {
  if (name == "baseline") return CompareMode::kBaseline;
  if (name == "rotation_aug") return CompareMode::kRotationAug;
  if (name == "frinet") return CompareMode::kFrinet;
  if (name == "orientation_sweep") return CompareMode::kOrientationSweep;
  throw std::invalid_argument("unknown comparison mode: " + name);
}

std::string to_string(CompareMode mode) {
  switch (mode) {
    case CompareMode::kBaseline: return "baseline";
    case CompareMode::kRotationAug: return "rotation_aug";
    case CompareMode::kFrinet: return "frinet";
    case CompareMode::kOrientationSweep: return "orientation_sweep";
  }
  return "?";
}

std::vector<ArmSpec> arms_for_mode(CompareMode mode, const engine::TrainConfig& base) {
  switch (mode) {
    case CompareMode::kBaseline:
      // Single-orientation matching, no rotation-consistency supervision.
      return {{"baseline", {0}, 0.0, false, {}, {}}};
    case CompareMode::kRotationAug:
      return {{"rotation_aug", {0}, 0.0, true, {}, {}}};
    case CompareMode::kFrinet:
      return {{"frinet", {0, 90, 180, 270}, base.mu, false, {}, {}}};
    case CompareMode::kOrientationSweep:
      return {{"orient_0", {0}, base.mu, false, {}, {}},
              {"orient_0_90", {0, 90}, base.mu, false, {}, {}},
              {"orient_0_90_180", {0, 90, 180}, base.mu, false, {}, {}},
              {"orient_0_90_180_270", {0, 90, 180, 270}, base.mu, false, {}, {}}};
  }
  throw std::invalid_argument("unknown comparison mode");
}

CompareReport compare_harness(CompareMode mode, const CompareConfig& config) {
  if (!config.dataset) throw std::invalid_argument("compare_harness: dataset required");
  if (config.folds.empty() || config.seeds.empty())
    throw std::invalid_argument("compare_harness: folds and seeds required");
  for (const auto& fold : config.folds)
    if (!config.backbone_per_fold.count(fold.fold))
      throw std::invalid_argument("compare_harness: missing backbone for fold " +
                                  std::to_string(fold.fold));

  const auto arms = arms_for_mode(mode, config.base_config);
  for (const auto& arm : arms) {
    if (arm.seed_override || arm.backbone_override)
      throw std::invalid_argument(
          "compare_harness: arm '" + arm.name +
          "' overrides the shared seed or backbone; arms must match to compare fairly");
  }

  CompareReport report;
  report.mode = mode;
  for (const auto& arm : arms) report.arm_order.push_back(arm.name);

  // Shared evaluation episodes per fold: verified identical across arms.
  std::map<int, std::string> eval_digest_per_fold;

  for (const auto& fold : config.folds) {
    auto [bb, spec] = backbone::load_backbone(config.backbone_per_fold.at(fold.fold));
    for (const uint64_t seed : config.seeds) {
      for (const auto& arm : arms) {
        engine::TrainConfig cfg = config.base_config;
        cfg.orientations = arm.orientations;
        cfg.mu = arm.mu;
        cfg.rotation_augment = arm.rotation_augment;
        cfg.seed = seed;
        cfg.validate();

        engine::FrinetModel<float> model(engine::model_config_from(cfg, spec.channels));
        core::log_info("compare: arm " + arm.name + " fold " + std::to_string(fold.fold) +
                       " seed " + std::to_string(seed));
        engine::train(*config.dataset, fold, cfg, config.shots, bb, model, "",
                      config.workers);

        engine::EvalOptions eval;
        eval.num_episodes = config.eval_episodes;
        eval.seed = config.eval_seed;
        eval.shots = config.shots;
        eval.workers = config.workers;
        const EvalReport r =
            engine::evaluate(*config.dataset, fold, cfg, model, bb, eval);

        auto [it, inserted] =
            eval_digest_per_fold.emplace(fold.fold, r.episodes_digest);
        if (!inserted && it->second != r.episodes_digest)
          throw std::runtime_error(
              "compare_harness: evaluation episode lists differ across arms");

        report.rows.push_back({arm.name, fold.fold, seed, r.miou, r.episodes_digest});
      }
    }
  }

  for (const auto& arm : arms) {
    double sum = 0;
    int n = 0;
    for (const auto& row : report.rows)
      if (row.arm == arm.name) {
        sum += row.miou;
        ++n;
      }
    report.mean_by_arm[arm.name] = n ? sum / n : 0.0;
  }

  if (!config.out_dir.empty()) {
    fs::create_directories(config.out_dir);
    std::ofstream md(fs::path(config.out_dir) / "comparison.md");
    md << comparison_to_markdown(report);
    std::ofstream csv(fs::path(config.out_dir) / "comparison.csv");
    csv << comparison_to_csv(report);
  }
  return report;
}

namespace {
std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v * 100.0);
  return buf;
}
}  // namespace

std::string comparison_to_markdown(const CompareReport& report) {
  std::ostringstream out;
  out << "# Comparison: " << to_string(report.mode) << "\n\n";
  out << "| arm | fold | seed | mIoU (%) |\n|---|---|---|---|\n";
  for (const auto& row : report.rows)
    out << "| " << row.arm << " | " << row.fold << " | " << row.seed << " | "
        << pct(row.miou) << " |\n";
  out << "\n| arm | mean mIoU (%) |\n|---|---|\n";
  for (const auto& arm : report.arm_order)
    out << "| " << arm << " | " << pct(report.mean_by_arm.at(arm)) << " |\n";
  return out.str();
}

std::string comparison_to_csv(const CompareReport& report) {
  std::ostringstream out;
  out << "arm,fold,seed,miou\n";
  for (const auto& row : report.rows) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", row.miou);
    out << row.arm << "," << row.fold << "," << row.seed << "," << buf << "\n";
  }
  return out.str();
}

}  // namespace frinet::evaluation
