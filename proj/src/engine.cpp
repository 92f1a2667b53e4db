#include "frinet/engine.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "frinet/logging.hpp"
#include "frinet/parallel.hpp"
#include "frinet/serialize.hpp"
#include "frinet/visuals.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace frinet::engine {

void TrainConfig::validate() const {
  if (learning_rate <= 0) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (epochs_1shot < 1 || epochs_5shot < 1)
    throw std::invalid_argument("TrainConfig: epoch counts must be >= 1");
  if (mu < 0) throw std::invalid_argument("TrainConfig: mu must be nonnegative");
  if (optimizer != "sgd") throw std::invalid_argument("TrainConfig: unsupported optimizer " + optimizer);
  if (momentum < 0 || momentum >= 1) throw std::invalid_argument("TrainConfig: bad momentum");
  if (input_size < 16) throw std::invalid_argument("TrainConfig: input_size too small");
  if (aspp_channels < 1) throw std::invalid_argument("TrainConfig: aspp_channels must be >= 1");
  if (orientations.empty() || orientations.front() != 0)
    throw std::invalid_argument("TrainConfig: orientations must contain 0 first");
  std::vector<int> seen;
  for (int a : orientations) {
    core::orientation_index(a);
    if (std::find(seen.begin(), seen.end(), a) != seen.end())
      throw std::invalid_argument("TrainConfig: duplicate orientation");
    seen.push_back(a);
  }
}

std::string TrainConfig::to_text() const {
  std::ostringstream out;
  out << "learning_rate=" << learning_rate << "\n";
  out << "batch_size=" << batch_size << "\n";
  out << "epochs_1shot=" << epochs_1shot << "\n";
  out << "epochs_5shot=" << epochs_5shot << "\n";
  out << "mu=" << mu << "\n";
  out << "optimizer=" << optimizer << "\n";
  out << "momentum=" << momentum << "\n";
  out << "seed=" << seed << "\n";
  out << "orientations=";
  for (size_t i = 0; i < orientations.size(); ++i)
    out << (i ? "," : "") << orientations[i];
  out << "\n";
  out << "input_size=" << input_size << "\n";
  out << "flip_augment=" << (flip_augment ? 1 : 0) << "\n";
  out << "rotation_augment=" << (rotation_augment ? 1 : 0) << "\n";
  out << "aspp_channels=" << aspp_channels << "\n";
  return out.str();
}

TrainConfig TrainConfig::from_text(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    // trim
    auto notspace = [](unsigned char c) { return !std::isspace(c); };
    line.erase(line.begin(), std::find_if(line.begin(), line.end(), notspace));
    line.erase(std::find_if(line.rbegin(), line.rend(), notspace).base(), line.end());
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key=value");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "learning_rate") cfg.learning_rate = std::stod(value);
    else if (key == "batch_size") cfg.batch_size = std::stoi(value);
    else if (key == "epochs_1shot") cfg.epochs_1shot = std::stoi(value);
    else if (key == "epochs_5shot") cfg.epochs_5shot = std::stoi(value);
    else if (key == "mu") cfg.mu = std::stod(value);
    else if (key == "optimizer") cfg.optimizer = value;
    else if (key == "momentum") cfg.momentum = std::stod(value);
    else if (key == "seed") cfg.seed = std::stoull(value);
    else if (key == "input_size") cfg.input_size = std::stoi(value);
    else if (key == "flip_augment") cfg.flip_augment = std::stoi(value) != 0;
    else if (key == "rotation_augment") cfg.rotation_augment = std::stoi(value) != 0;
    else if (key == "aspp_channels") cfg.aspp_channels = std::stoi(value);
    else if (key == "orientations") {
      cfg.orientations.clear();
      std::istringstream vs(value);
      std::string tok;
      while (std::getline(vs, tok, ',')) cfg.orientations.push_back(std::stoi(tok));
    } else {
      throw std::invalid_argument("config: unknown key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

TrainConfig TrainConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

std::string TrainConfig::digest() const {
  const std::string text = to_text();
  return core::hex64(core::fnv1a64_bytes(text.data(), text.size()));
}

ModelConfig model_config_from(const TrainConfig& config, int feature_channels) {
  ModelConfig mc;
  mc.feature_channels = feature_channels;
  mc.aspp_channels = config.aspp_channels;
  mc.orientations = config.orientations;
  mc.init_seed = core::derive_seed(config.seed, "model-init");
  return mc;
}

namespace {

data::Episode transform_for_training(data::Episode episode, const TrainConfig& config,
                                     core::Rng& rng) {
  // Per-image transforms; flips first, then any rotation augmentation, so
  // cache keys compose as (id, flip, rotation).
  auto transform = [&](data::ImageSample& s) {
    if (config.flip_augment) s = data::augment_flip(s, rng);
    if (config.rotation_augment) {
      const int angle = static_cast<int>(rng.uniform_u64(4)) * 90;
      s = data::rotate_sample(s, angle);
    }
  };
  for (auto& support : episode.supports) transform(support);
  transform(episode.query);
  return episode;
}

}  // namespace

TrainResult train(const data::Dataset& dataset, const data::SplitConfig& split,
                  const TrainConfig& config, int shots,
                  const backbone::Backbone<float>& bb, FrinetModel<float>& model,
                  const std::string& out_dir, int workers) {
  config.validate();
  if (shots < 1) throw std::invalid_argument("train: shots must be >= 1");
  if (!bb.weights_ready()) throw std::runtime_error("train: backbone weights not loaded");

  TrainResult result;
  result.shots = shots;
  result.rng_state.master_seed = config.seed;
  result.backbone_checksum_before = bb.weights_checksum();

  const size_t usable = dataset.count_images_with_any(split.base_classes);
  if (usable == 0) throw std::runtime_error("train: no base-class images in dataset");
  const int epochs = config.epochs_for_shots(shots);
  const long steps_per_epoch =
      std::max<long>(1, static_cast<long>(usable) / config.batch_size);
  const long max_iter = static_cast<long>(epochs) * steps_per_epoch;

  FeatureCache<float> cache(bb);
  auto snapshot = core::export_params(model.params());
  long global_step = 0;
  bool aborted = false;

  if (!out_dir.empty()) fs::create_directories(out_dir);
  const std::string ckpt_path =
      out_dir.empty() ? "" : (fs::path(out_dir) / "checkpoint.frw").string();

  for (int epoch = 1; epoch <= epochs && !aborted; ++epoch) {
    double sum_all = 0, sum_main = 0, sum_rot = 0;
    long counted = 0;
    for (long step = 0; step < steps_per_epoch && !aborted; ++step) {
      std::vector<data::Episode> episodes;
      episodes.reserve(static_cast<size_t>(config.batch_size));
      for (int b = 0; b < config.batch_size; ++b) {
        const uint64_t ep_seed = core::derive_seed(
            config.seed, "train-episode", static_cast<uint64_t>(global_step),
            static_cast<uint64_t>(b));
        data::Episode ep = data::sample_episode(dataset, split, data::Phase::kTrain, shots,
                                                ep_seed, config.input_size);
        core::Rng aug(core::derive_seed(config.seed, "augment",
                                        static_cast<uint64_t>(global_step),
                                        static_cast<uint64_t>(b)));
        episodes.push_back(transform_for_training(std::move(ep), config, aug));
      }

      std::vector<std::map<std::string, core::Tensor<float>>> grads(
          static_cast<size_t>(config.batch_size));
      std::vector<std::array<double, 3>> losses(static_cast<size_t>(config.batch_size));
      core::parallel_for(config.batch_size, workers, [&](long i) {
        core::nn::GraphBuild<float> g(model.params(), /*train=*/true);
        auto fwd = forward_episode(episodes[static_cast<size_t>(i)], model, cache, g);
        auto bundle = episode_losses(fwd, episodes[static_cast<size_t>(i)].query.mask,
                                     static_cast<float>(config.mu));
        losses[static_cast<size_t>(i)] = {static_cast<double>(bundle.all_value()),
                                          static_cast<double>(bundle.main_value()),
                                          static_cast<double>(bundle.rotation_value())};
        core::ad::backward(bundle.loss_all);
        g.accumulate_grads(grads[static_cast<size_t>(i)],
                           1.0f / static_cast<float>(config.batch_size));
      });

      bool diverged = false;
      for (const auto& l : losses)
        if (!std::isfinite(l[0]) || l[0] > 1e3) diverged = true;
      if (diverged) {
        core::log_error("train: loss diverged at step " + std::to_string(global_step) +
                        ", restoring last epoch checkpoint");
        core::import_params(model.params(), snapshot);
        result.diverged = true;
        aborted = true;
        break;
      }

      std::map<std::string, core::Tensor<float>> total;
      for (const auto& g : grads)
        for (const auto& [name, tensor] : g) {
          auto it = total.find(name);
          if (it == total.end())
            total.emplace(name, tensor);
          else
            for (long i = 0; i < tensor.numel(); ++i) it->second[i] += tensor[i];
        }

      const double lr = core::nn::poly_lr(config.learning_rate, global_step, max_iter);
      core::nn::sgd_step(model.params(), total, static_cast<float>(lr),
                         static_cast<float>(config.momentum));

      for (const auto& l : losses) {
        sum_all += l[0];
        sum_main += l[1];
        sum_rot += l[2];
        ++counted;
      }
      ++global_step;
    }

    if (aborted) break;
    EpochStats stats;
    stats.epoch = epoch;
    stats.loss_all = sum_all / std::max<long>(1, counted);
    stats.loss_main = sum_main / std::max<long>(1, counted);
    stats.loss_rotation = sum_rot / std::max<long>(1, counted);
    result.epochs.push_back(stats);
    core::log_info(core::strfmt("epoch %d/%d loss_all %.4f (main %.4f, rotation %.4f)",
                                epoch, epochs, stats.loss_all, stats.loss_main,
                                stats.loss_rotation));
    snapshot = core::export_params(model.params());
    result.rng_state.steps_done = global_step;

    if (!ckpt_path.empty()) {
      CheckpointMeta meta;
      meta.config = config;
      meta.model_config = model.config();
      meta.epoch = epoch;
      meta.shots = shots;
      meta.backbone_checksum = core::hex64(result.backbone_checksum_before);
      meta.metric_log = result.epochs;
      meta.rng_state = result.rng_state;
      save_checkpoint(ckpt_path, model, meta);
      result.checkpoint_path = ckpt_path;
    }
  }

  result.backbone_checksum_after = bb.weights_checksum();
  if (result.backbone_checksum_after != result.backbone_checksum_before)
    throw std::runtime_error("train: frozen backbone changed during training");
  return result;
}

TrainResult train_from_files(const std::string& dataset_root, int fold,
                             const TrainConfig& config, int shots,
                             const std::string& backbone_path, const std::string& out_dir,
                             int workers) {
  const data::Dataset dataset = data::Dataset::load_dir(dataset_root);
  const data::SplitConfig split = data::load_split_for_dataset(dataset_root, fold);
  auto [bb, spec] = backbone::load_backbone(backbone_path);
  FrinetModel<float> model(model_config_from(config, spec.channels));
  TrainResult result = train(dataset, split, config, shots, bb, model, out_dir, workers);
  if (!result.checkpoint_path.empty()) {
    CheckpointMeta meta = read_checkpoint_meta(result.checkpoint_path);
    meta.backbone_path = backbone_path;
    save_checkpoint(result.checkpoint_path, model, meta);
  }
  return result;
}

evaluation::EvalReport evaluate(const data::Dataset& dataset,
                                const data::SplitConfig& split, const TrainConfig& config,
                                FrinetModel<float>& model,
                                const backbone::Backbone<float>& bb,
                                const EvalOptions& options) {
  if (!bb.weights_ready()) throw std::runtime_error("evaluate: backbone weights not loaded");
  if (options.num_episodes < 0) throw std::invalid_argument("evaluate: bad episode count");

  data::SplitConfig effective = split;
  effective.novel_classes.clear();
  std::vector<int> skipped;
  for (int c : split.novel_classes) {
    if (dataset.images_with_class(c).size() >= static_cast<size_t>(options.shots) + 1)
      effective.novel_classes.push_back(c);
    else {
      skipped.push_back(c);
      core::log_warn("evaluate: class " + std::to_string(c) +
                     " has too few images for " + std::to_string(options.shots) +
                     "-shot episodes; omitted from the report");
    }
  }
  if (effective.novel_classes.empty())
    throw std::runtime_error("evaluate: no usable novel class");

  std::vector<data::Episode> episodes;
  episodes.reserve(static_cast<size_t>(options.num_episodes));
  uint64_t episodes_hash = 0xcbf29ce484222325ull;
  for (int i = 0; i < options.num_episodes; ++i) {
    const uint64_t ep_seed =
        core::derive_seed(options.seed, "eval-episode", static_cast<uint64_t>(i));
    episodes.push_back(data::sample_episode(dataset, effective, data::Phase::kTest,
                                            options.shots, ep_seed, config.input_size));
    const std::string key = episodes.back().episode_key();
    episodes_hash = core::fnv1a64_bytes(key.data(), key.size(), episodes_hash);
    episodes_hash = core::fnv1a64_bytes("\n", 1, episodes_hash);
  }
  const std::string episodes_digest = core::hex64(episodes_hash);

  if (options.num_episodes == 0) {
    evaluation::EvalReport report;
    report.fold = split.fold;
    report.shots = options.shots;
    report.num_episodes = 0;
    report.config_digest = config.digest();
    report.episodes_digest = episodes_digest;
    report.status = "no_episodes";
    report.skipped_classes = skipped;
    core::log_warn("evaluate: no episodes requested");
    return report;
  }

  const bool dump_rel = !options.dump_relations_dir.empty();
  const bool dump_branches = !options.dump_branches_dir.empty();
  const bool dump_masks = !options.dump_masks_dir.empty();
  if (dump_rel) fs::create_directories(options.dump_relations_dir);
  if (dump_branches) fs::create_directories(options.dump_branches_dir);
  if (dump_masks) fs::create_directories(options.dump_masks_dir);

  FeatureCache<float> cache(bb);
  std::vector<core::Tensor<uint8_t>> predictions(episodes.size());
  core::parallel_for(static_cast<long>(episodes.size()), options.workers, [&](long i) {
    const auto& ep = episodes[static_cast<size_t>(i)];
    core::nn::GraphBuild<float> g(model.params(), /*train=*/false);
    auto fwd = forward_episode(episodes[static_cast<size_t>(i)], model, cache, g);
    predictions[static_cast<size_t>(i)] = rothead::predict_mask(fwd.fused->value);

    char tag[32];
    std::snprintf(tag, sizeof(tag), "ep_%05ld", i);
    if (dump_rel) {
      for (size_t b = 0; b < fwd.relations.size(); ++b) {
        const std::string base = (fs::path(options.dump_relations_dir) / tag).string() +
                                 "_b" + std::to_string(fwd.angles[b]);
        evaluation::write_tensor_dump(base + "_scores.frtd", fwd.scores[b]->value);
        evaluation::write_tensor_dump(base + "_relations.frtd", fwd.relations[b]->value);
        const auto& rel = fwd.relations[b]->value;
        for (int o = 0; o < rel.size(0); ++o) {
          core::Tensor<float> map({rel.size(1), rel.size(2)});
          std::copy(rel.data() + static_cast<long>(o) * map.numel(),
                    rel.data() + static_cast<long>(o + 1) * map.numel(), map.data());
          core::write_png(base + "_o" + std::to_string(o) + ".png",
                          evaluation::heatmap_image(map, 0.0, 1.0));
        }
      }
    }
    if (dump_branches) {
      const std::string base = (fs::path(options.dump_branches_dir) / tag).string();
      for (size_t b = 0; b < fwd.branch_logits.size(); ++b)
        evaluation::write_tensor_dump(base + "_b" + std::to_string(fwd.angles[b]) + ".frtd",
                                      fwd.branch_logits[b]->value);
      evaluation::write_tensor_dump(base + "_fused.frtd", fwd.fused->value);
      core::write_png(base + "_pred.png",
                      evaluation::overlay_mask(ep.query.image,
                                               predictions[static_cast<size_t>(i)],
                                               {230, 40, 40}));
      core::write_png(base + "_gt.png",
                      evaluation::overlay_mask(ep.query.image, ep.query.mask, {40, 220, 40}));
    }
    if (dump_masks) {
      const std::string base = (fs::path(options.dump_masks_dir) / tag).string();
      evaluation::write_tensor_dump(base + "_pred.frtd", predictions[static_cast<size_t>(i)]);
      evaluation::write_tensor_dump(base + "_gt.frtd", ep.query.mask);
    }
    if (!options.visuals_dir.empty() && i == 0) {
      std::vector<core::Tensor<float>> rel;
      for (const auto& r : fwd.relations) rel.push_back(r->value);
      evaluation::render_visuals(ep, rel, fwd.fused->value, options.visuals_dir);
    }
  });

  evaluation::ConfusionAccumulator acc;
  for (size_t i = 0; i < episodes.size(); ++i)
    acc.accumulate(predictions[i], episodes[i].query.mask, episodes[i].target_class);

  if (dump_masks) {
    std::ofstream index(fs::path(options.dump_masks_dir) / "episodes.csv");
    index << "index,class_id,key\n";
    for (size_t i = 0; i < episodes.size(); ++i)
      index << i << "," << episodes[i].target_class << "," << episodes[i].episode_key()
            << "\n";
  }

  evaluation::EvalReport report =
      evaluation::finalize(acc, split.fold, options.shots, options.num_episodes,
                           config.digest(), episodes_digest, options.per_episode_mean);
  report.skipped_classes = skipped;
  return report;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const std::string& path, const FrinetModel<float>& model,
                     const CheckpointMeta& meta) {
  core::write_weights_file(path, core::export_params(model.params()));
  json j;
  j["epoch"] = meta.epoch;
  j["shots"] = meta.shots;
  j["train_config"] = meta.config.to_text();
  j["model_config"] = {{"feature_channels", meta.model_config.feature_channels},
                       {"aspp_channels", meta.model_config.aspp_channels},
                       {"orientations", meta.model_config.orientations},
                       {"init_seed", meta.model_config.init_seed}};
  j["backbone"] = {{"path", meta.backbone_path}, {"checksum", meta.backbone_checksum}};
  j["rng_state"] = {{"master_seed", meta.rng_state.master_seed},
                    {"steps_done", meta.rng_state.steps_done}};
  json log = json::array();
  for (const auto& e : meta.metric_log)
    log.push_back({{"epoch", e.epoch},
                   {"loss_all", e.loss_all},
                   {"loss_main", e.loss_main},
                   {"loss_rotation", e.loss_rotation}});
  j["metric_log"] = log;
  std::ofstream out(path + ".json");
  if (!out) throw std::runtime_error("cannot write checkpoint sidecar: " + path + ".json");
  out << j.dump(2) << "\n";
}

CheckpointMeta read_checkpoint_meta(const std::string& path) {
  std::ifstream in(path + ".json");
  if (!in) throw std::runtime_error("missing checkpoint sidecar: " + path + ".json");
  json j = json::parse(in);
  CheckpointMeta meta;
  meta.epoch = j.at("epoch").get<int>();
  meta.shots = j.at("shots").get<int>();
  meta.config = TrainConfig::from_text(j.at("train_config").get<std::string>());
  const auto& mc = j.at("model_config");
  meta.model_config.feature_channels = mc.at("feature_channels").get<int>();
  meta.model_config.aspp_channels = mc.at("aspp_channels").get<int>();
  meta.model_config.orientations = mc.at("orientations").get<std::vector<int>>();
  meta.model_config.init_seed = mc.at("init_seed").get<uint64_t>();
  meta.backbone_path = j.at("backbone").at("path").get<std::string>();
  meta.backbone_checksum = j.at("backbone").at("checksum").get<std::string>();
  meta.rng_state.master_seed = j.at("rng_state").at("master_seed").get<uint64_t>();
  meta.rng_state.steps_done = j.at("rng_state").at("steps_done").get<long>();
  for (const auto& e : j.at("metric_log")) {
    EpochStats s;
    s.epoch = e.at("epoch").get<int>();
    s.loss_all = e.at("loss_all").get<double>();
    s.loss_main = e.at("loss_main").get<double>();
    s.loss_rotation = e.at("loss_rotation").get<double>();
    meta.metric_log.push_back(s);
  }
  return meta;
}

std::pair<std::unique_ptr<FrinetModel<float>>, CheckpointMeta> load_checkpoint(
    const std::string& path) {
  CheckpointMeta meta = read_checkpoint_meta(path);
  auto model = std::make_unique<FrinetModel<float>>(meta.model_config);
  core::import_params(model->params(), core::read_weights_file(path));
  return {std::move(model), meta};
}

}  // namespace frinet::engine
