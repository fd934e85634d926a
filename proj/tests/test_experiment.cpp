#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "mtp/experiment.hpp"
#include "synthetic.hpp"

using namespace mtp;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str(const std::string& rel = "") const { return (path / rel).string(); }
};

std::string slurp(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// A small fast-running configuration over a synthetic UCR pair.
config::RunConfig quick_config(const TempDir& dir) {
  testutil::WaveSpec spec;
  spec.length = 16;
  testutil::write_ucr_file(dir.str("train.ts"), 8, spec, 100);
  testutil::write_ucr_file(dir.str("test.ts"), 6, spec, 200);

  config::RunConfig cfg;
  cfg.dataset = dir.str("train.ts");
  cfg.test_dataset = dir.str("test.ts");
  cfg.split_mode = "archive";
  cfg.embed_dim = 8;
  cfg.fusion_dim = 16;
  cfg.depth = 1;
  cfg.taps = 5;
  cfg.filters = 2;
  cfg.phi = 8.0;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.repeats = 1;
  cfg.lr = 1e-3;
  cfg.seed = 3;
  cfg.out_dir = dir.str("out");
  return cfg;
}

}  // namespace

TEST_CASE("load_data remaps archive test labels onto the training label table") {
  TempDir dir("mtp_exp_labels");
  {
    std::ofstream t(dir.str("train.ts"));
    t << "@classLabel true x y\n@data\n1,2,3:x\n4,5,6:y\n";
    std::ofstream e(dir.str("test.ts"));
    e << "@classLabel true x y\n@data\n1,2,3:y\n4,5,6:x\n";  // y first here
  }
  config::RunConfig cfg;
  cfg.dataset = dir.str("train.ts");
  cfg.test_dataset = dir.str("test.ts");
  cfg.split_mode = "archive";
  auto data = experiment::load_data(cfg);
  REQUIRE(data.train[0].label == 0);  // x
  REQUIRE(data.test[0].label == 1);   // y, remapped to the training id
  REQUIRE(data.test[1].label == 0);
}

TEST_CASE("run_experiment writes config echo, metrics, and checkpoints") {
  TempDir dir("mtp_exp_run");
  auto cfg = quick_config(dir);
  auto result = experiment::run_experiment(cfg);

  REQUIRE(result.folds.size() == 1);  // archive mode: one split per repeat
  REQUIRE(fs::exists(cfg.out_dir + "/config.txt"));
  REQUIRE(fs::exists(cfg.out_dir + "/metrics.txt"));
  REQUIRE(fs::exists(cfg.out_dir + "/ckpt_r0_f0.mtpc"));

  // Config echo reparses to the same config.
  auto echoed = config::parse_file(cfg.out_dir + "/config.txt");
  REQUIRE(config::echo(echoed) == config::echo(cfg));

  // Metrics record carries per-fold and aggregate lines.
  const std::string rec = slurp(cfg.out_dir + "/metrics.txt");
  REQUIRE(rec.find("repeat0.fold0.accuracy") != std::string::npos);
  REQUIRE(rec.find("aggregate.accuracy.mean") != std::string::npos);
  REQUIRE(rec.find("aggregate.macro_f1.std") != std::string::npos);
}

TEST_CASE("kfold mode writes a split cache per repeat and one checkpoint per fold") {
  TempDir dir("mtp_exp_kfold");
  auto cfg = quick_config(dir);
  cfg.split_mode = "kfold";
  cfg.test_dataset.clear();
  cfg.folds = 3;
  cfg.epochs = 1;
  auto result = experiment::run_experiment(cfg);
  REQUIRE(result.folds.size() == 3);
  REQUIRE(fs::exists(cfg.out_dir + "/splits_r0.txt"));
  REQUIRE(fs::exists(cfg.out_dir + "/ckpt_r0_f0.mtpc"));
  REQUIRE(fs::exists(cfg.out_dir + "/ckpt_r0_f1.mtpc"));
}

TEST_CASE("evaluate_checkpoint reproduces the recorded test metrics") {
  TempDir dir("mtp_exp_eval");
  auto cfg = quick_config(dir);
  auto result = experiment::run_experiment(cfg);

  // Evaluating the saved model on the archive test set must reproduce the
  // fold metrics (same data, same deterministic text pipeline).
  config::RunConfig eval_cfg = cfg;
  eval_cfg.dataset = cfg.test_dataset;
  eval_cfg.split_mode = "kfold";  // treat the file as a plain labeled dataset
  auto report = experiment::evaluate_checkpoint(cfg.out_dir + "/ckpt_r0_f0.mtpc", eval_cfg);
  REQUIRE(report.accuracy == Catch::Approx(result.folds[0].test_metrics.accuracy).margin(1e-12));
  REQUIRE(report.macro_f1 == Catch::Approx(result.folds[0].test_metrics.macro_f1).margin(1e-12));
}

TEST_CASE("checkpoint meta round-trips the run config and model dimensions") {
  config::RunConfig cfg;
  cfg.dataset = "d.ts";
  model::ModelConfig mcfg;
  mcfg.series_len = 16;
  mcfg.taps = 5;
  mcfg.fusion_dim = 16;
  mcfg.vocab_size = 33;
  mcfg.num_classes = 4;
  auto meta = experiment::make_meta(cfg, mcfg);
  auto parsed = experiment::parse_meta(meta);
  REQUIRE(parsed.run.dataset == "d.ts");
  REQUIRE(parsed.series_len == 16);
  REQUIRE(parsed.channels == 1);
  REQUIRE(parsed.num_classes == 4);
  REQUIRE(parsed.vocab_size == 33);
}

TEST_CASE("ablation runner sets exactly one drop flag") {
  TempDir dir("mtp_exp_ablate");
  auto cfg = quick_config(dir);
  cfg.epochs = 1;
  auto result = experiment::run_ablation(cfg, "text");
  REQUIRE(fs::exists(cfg.out_dir + "/ablate-text/config.txt"));
  auto echoed = config::parse_file(cfg.out_dir + "/ablate-text/config.txt");
  REQUIRE(echoed.drop_text);
  REQUIRE_FALSE(echoed.drop_vision);
  REQUIRE_THROWS_AS(experiment::run_ablation(cfg, "everything"), std::invalid_argument);
}

TEST_CASE("feature export: header shape, PCA columns and byte-identical re-export") {
  TempDir dir("mtp_exp_export");
  auto cfg = quick_config(dir);
  cfg.epochs = 1;
  experiment::run_experiment(cfg);

  auto cm = experiment::load_checkpoint_model(cfg.out_dir + "/ckpt_r0_f0.mtpc");
  auto all = experiment::load_data(cfg);
  auto texts = experiment::make_texts(all.train, cfg);
  auto encoded = experiment::encode_set(all.train, texts, cm.stats, cm.vocab);

  const std::string csv1 = dir.str("features1.csv"), csv2 = dir.str("features2.csv");
  experiment::export_features(cm.mdl, encoded, csv1);
  experiment::export_features(cm.mdl, encoded, csv2);
  REQUIRE(slurp(csv1) == slurp(csv2));

  std::ifstream in(csv1);
  std::string header;
  std::getline(in, header);
  // 1 label + 4 feature sets of d + 4 * 2 PCA columns.
  const int d = cm.mdl.cfg.fusion_dim;
  std::size_t commas = 0;
  for (char c : header) commas += c == ',';
  REQUIRE(static_cast<int>(commas) == 4 * d + 8);
  REQUIRE(header.rfind("label,", 0) == 0);
  REQUIRE(header.find("fused_pc2") != std::string::npos);

  std::string row;
  std::size_t rows = 0;
  while (std::getline(in, row))
    if (!row.empty()) ++rows;
  REQUIRE(rows == encoded.size());
}

TEST_CASE("PCA projections separate an axis-aligned two-cluster set") {
  // Two clusters along the first axis: pc1 must carry the separation.
  Tensor x({6, 3});
  for (int i = 0; i < 3; ++i) {
    x.at(i, 0) = 10.0 + 0.1 * i;
    x.at(i + 3, 0) = -10.0 - 0.1 * i;
    x.at(i, 1) = 0.5 * i;
    x.at(i + 3, 1) = 0.5 * i;
  }
  auto proj = experiment::detail::pca2_components(x);
  REQUIRE(proj.size() == 2);
  for (int i = 0; i < 3; ++i) {
    REQUIRE(proj[0].at(i) > 5.0);
    REQUIRE(proj[0].at(i + 3) < -5.0);
  }
  // Deterministic across calls.
  auto again = experiment::detail::pca2_components(x);
  REQUIRE(proj[0].vec() == again[0].vec());
  REQUIRE(proj[1].vec() == again[1].vec());
}

TEST_CASE("PGM export writes a valid header and one byte per pixel") {
  TempDir dir("mtp_exp_pgm");
  Tensor img({1, 3, 5});
  for (std::size_t i = 0; i < img.numel(); ++i) img[i] = static_cast<double>(i);
  const std::string path = dir.str("img.pgm");
  experiment::write_pgm(path, img);
  const std::string bytes = slurp(path);
  REQUIRE(bytes.rfind("P5\n5 3\n255\n", 0) == 0);
  REQUIRE(bytes.size() == std::string("P5\n5 3\n255\n").size() + 15);
  // Min maps to 0, max to 255.
  REQUIRE(static_cast<unsigned char>(bytes[bytes.size() - 15]) == 0);
  REQUIRE(static_cast<unsigned char>(bytes.back()) == 255);
}

TEST_CASE("make_texts honors the sidecar and falls back to the template") {
  TempDir dir("mtp_exp_texts");
  testutil::WaveSpec spec;
  spec.length = 12;
  testutil::write_ucr_file(dir.str("train.ts"), 2, spec, 5);
  config::RunConfig cfg;
  cfg.dataset = dir.str("train.ts");
  auto all = experiment::load_data(cfg);

  std::map<int, std::string> sidecar{{1, "custom description for window one"}};
  auto texts = experiment::make_texts(all.train, cfg, &sidecar);
  REQUIRE(texts.size() == all.train.size());
  REQUIRE(texts[1] == "custom description for window one");
  REQUIRE(texts[0].find("topic: ") != std::string::npos);
}
