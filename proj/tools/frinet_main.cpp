#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "frinet/compare.hpp"
#include "frinet/engine.hpp"
#include "frinet/logging.hpp"
#include "frinet/parallel.hpp"
#include "frinet/pretrain.hpp"
#include "frinet/synthetic.hpp"

namespace fs = std::filesystem;
using namespace frinet;

namespace {

std::vector<int> parse_int_list(const std::string& csv) {
  std::vector<int> out;
  std::istringstream in(csv);
  std::string tok;
  while (std::getline(in, tok, ',')) out.push_back(std::stoi(tok));
  return out;
}

std::vector<uint64_t> parse_u64_list(const std::string& csv) {
  std::vector<uint64_t> out;
  std::istringstream in(csv);
  std::string tok;
  while (std::getline(in, tok, ',')) out.push_back(std::stoull(tok));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"frinet: few-shot rotation-invariant segmentation toolkit"};
  app.require_subcommand(1);
  int workers = core::default_workers();
  app.add_option("--workers", workers, "worker thread count (default: hardware)");

  // --- make-synthetic -------------------------------------------------------
  auto* make_syn = app.add_subcommand("make-synthetic", "generate the oriented-shapes dataset");
  data::SyntheticConfig syn_cfg;
  std::string syn_out;
  make_syn->add_option("--out", syn_out, "output dataset directory")->required();
  make_syn->add_option("--num-images", syn_cfg.num_images);
  make_syn->add_option("--image-size", syn_cfg.image_size);
  make_syn->add_option("--classes", syn_cfg.shape_classes);
  make_syn->add_option("--seed", syn_cfg.rng_seed);
  make_syn->add_option("--distractor-prob", syn_cfg.distractor_prob);

  // --- pretrain --------------------------------------------------------------
  auto* pretrain_cmd = app.add_subcommand("pretrain", "base-class backbone pretraining");
  int pre_fold = 0;
  std::string pre_dataset, pre_out;
  backbone::PretrainConfig pre_cfg;
  pretrain_cmd->add_option("--fold", pre_fold, "fold index")->required();
  pretrain_cmd->add_option("--dataset", pre_dataset, "dataset root")->required();
  pretrain_cmd->add_option("--out", pre_out, "output weights path")->required();
  pretrain_cmd->add_option("--epochs", pre_cfg.epochs);
  pretrain_cmd->add_option("--lr", pre_cfg.learning_rate);
  pretrain_cmd->add_option("--seed", pre_cfg.seed);
  pretrain_cmd->add_option("--input-size", pre_cfg.input_size);
  pretrain_cmd->add_option("--channels", pre_cfg.backbone_channels);

  // --- init-backbone ----------------------------------------------------------
  auto* init_bb = app.add_subcommand(
      "init-backbone", "save a randomly initialized frozen backbone (control arm)");
  std::string init_out;
  uint64_t init_seed = 0;
  int init_channels = 64;
  init_bb->add_option("--out", init_out)->required();
  init_bb->add_option("--seed", init_seed);
  init_bb->add_option("--channels", init_channels);

  // --- train -------------------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train", "episodic meta-training");
  int train_fold = 0, train_shots = 1;
  std::string train_dataset, train_backbone, train_config_path, train_out;
  train_cmd->add_option("--fold", train_fold)->required();
  train_cmd->add_option("--shots", train_shots)->required();
  train_cmd->add_option("--dataset", train_dataset)->required();
  train_cmd->add_option("--backbone", train_backbone)->required();
  train_cmd->add_option("--config", train_config_path, "flat key=value config");
  train_cmd->add_option("--out", train_out, "checkpoint directory")->required();

  // --- eval ----------------------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("eval", "novel-class evaluation");
  std::string eval_ckpt, eval_dataset, eval_report_path;
  std::string eval_dump_rel, eval_dump_branches, eval_visuals;
  int eval_fold = 0, eval_episodes = 1000;
  uint64_t eval_seed = 0;
  bool eval_per_episode_mean = false;
  eval_cmd->add_option("--checkpoint", eval_ckpt)->required();
  eval_cmd->add_option("--dataset", eval_dataset)->required();
  eval_cmd->add_option("--fold", eval_fold)->required();
  eval_cmd->add_option("--episodes", eval_episodes);
  eval_cmd->add_option("--seed", eval_seed);
  eval_cmd->add_option("--report", eval_report_path)->required();
  eval_cmd->add_option("--dump-relations", eval_dump_rel);
  eval_cmd->add_option("--dump-branches", eval_dump_branches);
  eval_cmd->add_option("--visuals", eval_visuals);
  eval_cmd->add_flag("--per-episode-mean", eval_per_episode_mean);

  // --- report ----------------------------------------------------------------------
  auto* report_cmd = app.add_subcommand("report", "render report files");
  std::string report_in, report_format = "json";
  report_cmd->add_option("--in", report_in, "report JSON file or directory")->required();
  report_cmd->add_option("--format", report_format, "json|csv|md");

  // --- compare -----------------------------------------------------------------------
  auto* compare_cmd = app.add_subcommand("compare", "method comparison harness");
  std::string cmp_mode = "frinet", cmp_dataset, cmp_backbone_dir, cmp_config_path, cmp_out;
  std::string cmp_folds = "0,1,2", cmp_seeds = "1,2,3";
  int cmp_episodes = 200, cmp_shots = 1;
  uint64_t cmp_eval_seed = 9001;
  compare_cmd->add_option("--mode", cmp_mode, "baseline|rotation_aug|frinet|orientation_sweep")
      ->required();
  compare_cmd->add_option("--dataset", cmp_dataset)->required();
  compare_cmd->add_option("--backbone-dir", cmp_backbone_dir,
                          "directory with backbone_fold<N>.frw")->required();
  compare_cmd->add_option("--config", cmp_config_path);
  compare_cmd->add_option("--folds", cmp_folds);
  compare_cmd->add_option("--seeds", cmp_seeds);
  compare_cmd->add_option("--episodes", cmp_episodes);
  compare_cmd->add_option("--eval-seed", cmp_eval_seed);
  compare_cmd->add_option("--shots", cmp_shots);
  compare_cmd->add_option("--out", cmp_out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*make_syn) {
      data::write_synthetic_dataset(syn_out, syn_cfg);
      std::cout << "wrote synthetic dataset to " << syn_out << "\n";
    } else if (*pretrain_cmd) {
      const auto dataset = data::Dataset::load_dir(pre_dataset);
      const auto split = data::load_split_for_dataset(pre_dataset, pre_fold);
      const auto result =
          backbone::pretrain_on_base(dataset, split, pre_cfg, pre_out, workers);
      std::cout << "pretrained backbone saved to " << pre_out << " (pixel accuracy "
                << result.pixel_accuracy << ")\n";
    } else if (*init_bb) {
      auto bb = backbone::Backbone<float>::random(
          backbone::Architecture::toy(init_channels), init_seed);
      backbone::BackboneSpec spec;
      backbone::save_backbone(bb, init_out, spec);
      std::cout << "random backbone saved to " << init_out << "\n";
    } else if (*train_cmd) {
      engine::TrainConfig cfg = train_config_path.empty()
                                    ? engine::TrainConfig{}
                                    : engine::TrainConfig::from_file(train_config_path);
      const auto result = engine::train_from_files(train_dataset, train_fold, cfg,
                                                   train_shots, train_backbone, train_out,
                                                   workers);
      std::cout << "checkpoint: " << result.checkpoint_path
                << (result.diverged ? " (diverged; last good epoch kept)" : "") << "\n";
    } else if (*eval_cmd) {
      auto [model, meta] = engine::load_checkpoint(eval_ckpt);
      const auto dataset = data::Dataset::load_dir(eval_dataset);
      const auto split = data::load_split_for_dataset(eval_dataset, eval_fold);
      auto [bb, spec] = backbone::load_backbone(meta.backbone_path);
      engine::EvalOptions options;
      options.num_episodes = eval_episodes;
      options.seed = eval_seed;
      options.shots = meta.shots;
      options.workers = workers;
      options.per_episode_mean = eval_per_episode_mean;
      options.dump_relations_dir = eval_dump_rel;
      options.dump_branches_dir = eval_dump_branches;
      options.visuals_dir = eval_visuals;
      const auto report =
          engine::evaluate(dataset, split, meta.config, *model, bb, options);
      evaluation::write_report(eval_report_path, report);
      std::cout << "mIoU " << report.miou * 100.0 << "% over " << report.num_episodes
                << " episodes -> " << eval_report_path << "\n";
    } else if (*report_cmd) {
      std::vector<std::string> files;
      if (fs::is_directory(report_in)) {
        for (const auto& e : fs::directory_iterator(report_in))
          if (e.path().extension() == ".json") files.push_back(e.path().string());
        std::sort(files.begin(), files.end());
      } else {
        files.push_back(report_in);
      }
      for (const auto& f : files) {
        const auto report = evaluation::read_report(f);
        if (report_format == "json")
          std::cout << evaluation::report_to_json(report);
        else if (report_format == "csv")
          std::cout << evaluation::report_to_csv(report);
        else if (report_format == "md")
          std::cout << evaluation::report_to_markdown(report);
        else
          throw std::invalid_argument("unknown format: " + report_format);
      }
    } else if (*compare_cmd) {
      const auto dataset = data::Dataset::load_dir(cmp_dataset);
      evaluation::CompareConfig cc;
      cc.dataset = &dataset;
      for (int fold : parse_int_list(cmp_folds))
        cc.folds.push_back(data::load_split_for_dataset(cmp_dataset, fold));
      cc.seeds = parse_u64_list(cmp_seeds);
      cc.base_config = cmp_config_path.empty()
                           ? engine::TrainConfig{}
                           : engine::TrainConfig::from_file(cmp_config_path);
      cc.shots = cmp_shots;
      cc.eval_episodes = cmp_episodes;
      cc.eval_seed = cmp_eval_seed;
      cc.workers = workers;
      cc.out_dir = cmp_out;
      for (const auto& fold : cc.folds)
        cc.backbone_per_fold[fold.fold] =
            (fs::path(cmp_backbone_dir) / ("backbone_fold" + std::to_string(fold.fold) + ".frw"))
                .string();
      const auto report =
          evaluation::compare_harness(evaluation::compare_mode_from_string(cmp_mode), cc);
      std::cout << evaluation::comparison_to_markdown(report);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
