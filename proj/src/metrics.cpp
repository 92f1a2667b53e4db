#include "frinet/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "frinet/logging.hpp"

using json = nlohmann::json;

namespace frinet::evaluation {

void ConfusionAccumulator::accumulate(const Tensor<uint8_t>& predicted,
                                      const Tensor<uint8_t>& gt, int class_id) {
  if (predicted.shape() != gt.shape())
    throw std::invalid_argument("accumulate: prediction/ground-truth shape mismatch");
  uint64_t inter = 0, uni = 0;
  for (long i = 0; i < gt.numel(); ++i) {
    if (gt[i] == 255) continue;  // ignore pixels never counted
    const bool p = predicted[i] == 1;
    const bool t = gt[i] == 1;
    if (p && t) ++inter;
    if (p || t) ++uni;
  }
  auto& c = per_class[class_id];
  c.intersection += inter;
  c.unions += uni;
  c.episodes += 1;
  if (uni > 0)
    c.episode_iou_sum += static_cast<double>(inter) / static_cast<double>(uni);
  else
    c.episode_iou_sum += 1.0;  // empty target, empty prediction
}

void ConfusionAccumulator::merge(const ConfusionAccumulator& other) {
  for (const auto& [id, counts] : other.per_class) {
    auto& c = per_class[id];
    c.intersection += counts.intersection;
    c.unions += counts.unions;
    c.episodes += counts.episodes;
    c.episode_iou_sum += counts.episode_iou_sum;
  }
}

EvalReport finalize(const ConfusionAccumulator& acc, int fold, int shots,
                    int num_episodes, const std::string& config_digest,
                    const std::string& episodes_digest, bool per_episode_mean) {
  EvalReport report;
  report.fold = fold;
  report.shots = shots;
  report.num_episodes = num_episodes;
  report.config_digest = config_digest;
  report.episodes_digest = episodes_digest;
  report.per_episode_mean = per_episode_mean;
  if (num_episodes == 0 || acc.per_class.empty()) {
    report.status = "no_episodes";
    return report;
  }

  double sum = 0.0;
  int included = 0;
  for (const auto& [id, counts] : acc.per_class) {
    if (counts.unions == 0 && !per_episode_mean) {
      core::log_warn("finalize: class " + std::to_string(id) +
                     " has empty union, excluded from mIoU");
      continue;
    }
    double iou;
    if (per_episode_mean)
      iou = counts.episodes ? counts.episode_iou_sum / static_cast<double>(counts.episodes) : 0.0;
    else
      iou = static_cast<double>(counts.intersection) / static_cast<double>(counts.unions);
    report.per_class_iou[id] = iou;
    sum += iou;
    ++included;
  }
  if (included == 0)
    throw std::runtime_error("finalize: every class has an empty union");
  report.miou = sum / included;
  return report;
}

namespace {

std::string fixed6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

std::string report_to_json(const EvalReport& r) {
  // Hand-emitted so key order and float formatting are byte-stable.
  std::ostringstream out;
  out << "{\n";
  out << "  \"config_digest\": \"" << r.config_digest << "\",\n";
  out << "  \"episodes_digest\": \"" << r.episodes_digest << "\",\n";
  out << "  \"fold\": " << r.fold << ",\n";
  out << "  \"miou\": " << fixed6(r.miou) << ",\n";
  out << "  \"num_episodes\": " << r.num_episodes << ",\n";
  out << "  \"per_class_iou\": {";
  bool first = true;
  for (const auto& [id, iou] : r.per_class_iou) {
    out << (first ? "" : ", ") << "\"" << id << "\": " << fixed6(iou);
    first = false;
  }
  out << "},\n";
  out << "  \"per_episode_mean\": " << (r.per_episode_mean ? "true" : "false") << ",\n";
  out << "  \"shots\": " << r.shots << ",\n";
  out << "  \"skipped_classes\": [";
  for (size_t i = 0; i < r.skipped_classes.size(); ++i)
    out << (i ? ", " : "") << r.skipped_classes[i];
  out << "],\n";
  out << "  \"status\": \"" << r.status << "\"\n";
  out << "}\n";
  return out.str();
}

EvalReport report_from_json(const std::string& text) {
  json j = json::parse(text);
  EvalReport r;
  r.config_digest = j.at("config_digest").get<std::string>();
  r.episodes_digest = j.at("episodes_digest").get<std::string>();
  r.fold = j.at("fold").get<int>();
  r.miou = j.at("miou").get<double>();
  r.num_episodes = j.at("num_episodes").get<int>();
  for (const auto& [key, value] : j.at("per_class_iou").items())
    r.per_class_iou[std::stoi(key)] = value.get<double>();
  r.per_episode_mean = j.value("per_episode_mean", false);
  r.shots = j.at("shots").get<int>();
  r.skipped_classes = j.value("skipped_classes", std::vector<int>{});
  r.status = j.at("status").get<std::string>();
  return r;
}

void write_report(const std::string& path, const EvalReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write report: " + path);
  out << report_to_json(report);
}

EvalReport read_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read report: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return report_from_json(ss.str());
}

std::string report_to_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "fold,shots,num_episodes,class_id,iou\n";
  for (const auto& [id, iou] : r.per_class_iou)
    out << r.fold << "," << r.shots << "," << r.num_episodes << "," << id << ","
        << fixed6(iou) << "\n";
  out << r.fold << "," << r.shots << "," << r.num_episodes << ",mean," << fixed6(r.miou)
      << "\n";
  return out.str();
}

std::string report_to_markdown(const EvalReport& r) {
  std::ostringstream out;
  out << "| class | IoU |\n|---|---|\n";
  for (const auto& [id, iou] : r.per_class_iou)
    out << "| " << id << " | " << fixed6(iou) << " |\n";
  out << "| **mean** | **" << fixed6(r.miou) << "** |\n";
  return out.str();
}

}  // namespace frinet::evaluation
