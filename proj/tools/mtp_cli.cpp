// mtp command-line harness: train / evaluate / ablate / export-features /
// make-text over flat key=value run configs.
#include <exception>
#include <iomanip>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "mtp/experiment.hpp"

namespace {

mtp::config::RunConfig load_config(const std::string& path, const std::string& out_override,
                                   int seed_override) {
  auto cfg = mtp::config::parse_file(path);
  if (!out_override.empty()) cfg.out_dir = out_override;
  if (seed_override >= 0) cfg.seed = static_cast<unsigned>(seed_override);
  return cfg;
}

void print_result(const mtp::experiment::ExperimentResult& res) {
  std::cout << std::setprecision(6) << std::fixed;
  std::cout << "accuracy  " << res.accuracy.mean << " +/- " << res.accuracy.std_dev << "\n";
  std::cout << "macro_f1  " << res.macro_f1.mean << " +/- " << res.macro_f1.std_dev << "\n";
  std::cout << "metrics record: " << res.metrics_path << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mtp: multimodal traffic profiling harness"};
  app.require_subcommand(1);

  std::string config_path, out_dir, drop, ckpt_path, csv_path, pgm_dir, sidecar_out;
  int seed = -1;

  auto add_common = [&](CLI::App* sub, bool need_config = true) {
    auto* opt = sub->add_option("--config", config_path, "run config file (key = value lines)");
    if (need_config) opt->required();
    sub->add_option("--out", out_dir, "override out_dir");
    sub->add_option("--seed", seed, "override seed");
  };

  auto* train_cmd = app.add_subcommand("train", "train with the full repeat/fold protocol");
  add_common(train_cmd);
  train_cmd->add_option("--drop", drop, "drop one branch: vision|text|timeseries");

  auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint on a dataset");
  add_common(eval_cmd);
  eval_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();

  auto* ablate_cmd = app.add_subcommand("ablate", "train one ablation variant");
  add_common(ablate_cmd);
  ablate_cmd->add_option("--drop", drop, "vision|text|timeseries")->required();

  auto* export_cmd = app.add_subcommand("export-features", "dump branch/fused features as CSV");
  add_common(export_cmd);
  export_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  export_cmd->add_option("--csv", csv_path, "output CSV path")->required();
  export_cmd->add_option("--pgm-dir", pgm_dir, "also write generated-image PGMs here");

  auto* text_cmd = app.add_subcommand("make-text", "write the generated text sidecar");
  add_common(text_cmd);
  text_cmd->add_option("--sidecar-out", sidecar_out, "output sidecar path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) {
      auto cfg = load_config(config_path, out_dir, seed);
      if (!drop.empty()) {
        print_result(mtp::experiment::run_ablation(cfg, drop));
      } else {
        print_result(mtp::experiment::run_experiment(cfg));
      }
    } else if (eval_cmd->parsed()) {
      auto cfg = load_config(config_path, out_dir, seed);
      auto report = mtp::experiment::evaluate_checkpoint(ckpt_path, cfg);
      std::cout << mtp::metrics::to_record(report);
    } else if (ablate_cmd->parsed()) {
      auto cfg = load_config(config_path, out_dir, seed);
      print_result(mtp::experiment::run_ablation(cfg, drop));
    } else if (export_cmd->parsed()) {
      auto cfg = load_config(config_path, out_dir, seed);
      auto cm = mtp::experiment::load_checkpoint_model(ckpt_path);
      auto all = mtp::experiment::load_data(cfg);
      auto texts = mtp::experiment::make_texts(all.train, cfg);
      auto encoded = mtp::experiment::encode_set(all.train, texts, cm.stats, cm.vocab);
      mtp::experiment::export_features(cm.mdl, encoded, csv_path);
      std::cout << "wrote " << csv_path << "\n";
      if (!pgm_dir.empty()) {
        std::filesystem::create_directories(pgm_dir);
        const int count = std::min<int>(8, static_cast<int>(encoded.size()));
        for (int i = 0; i < count; ++i) {
          const std::string path = pgm_dir + "/instance" + std::to_string(i) + ".pgm";
          mtp::experiment::export_generated_image(cm.mdl, encoded[static_cast<std::size_t>(i)], path);
          std::cout << "wrote " << path << "\n";
        }
      }
    } else if (text_cmd->parsed()) {
      auto cfg = load_config(config_path, out_dir, seed);
      auto all = mtp::experiment::load_data(cfg);
      auto texts = mtp::experiment::make_texts(all.train, cfg);
      mtp::text::write_sidecar(sidecar_out, texts);
      std::cout << "wrote " << sidecar_out << " (" << texts.size() << " records)\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
