#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mtp/checkpoint.hpp"
#include "mtp/config.hpp"
#include "mtp/data.hpp"
#include "mtp/metrics.hpp"
#include "mtp/model.hpp"
#include "mtp/text.hpp"
#include "mtp/train.hpp"

// Experiment orchestration: dataset loading, split/text/vocab preparation,
// repeated training runs with checkpoint + metrics artifacts, evaluation from
// a checkpoint, and feature export with 2D PCA projections.
namespace mtp::experiment {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- loading

struct LoadedData {
  std::vector<data::TimeSeriesInstance> train;  // all instances in kfold mode
  std::vector<data::TimeSeriesInstance> test;   // archive mode only
  int class_count = 0;
};

namespace detail {

inline void check_uniform(const std::vector<data::TimeSeriesInstance>& insts) {
  require(!insts.empty(), "load_data: no instances");
  const int l = insts[0].length(), c = insts[0].channels();
  for (const auto& inst : insts)
    require(inst.length() == l && inst.channels() == c,
            "load_data: all instances must share one length and channel count");
}

// Remaps test labels onto the training file's label table so both files
// agree on class ids even if classes first appear in different orders.
inline void remap_labels(std::vector<data::TimeSeriesInstance>& test,
                         const std::vector<std::string>& train_names,
                         const std::vector<std::string>& test_names) {
  std::map<int, int> to_train;
  for (int i = 0; i < static_cast<int>(test_names.size()); ++i) {
    int mapped = -1;
    for (int j = 0; j < static_cast<int>(train_names.size()); ++j)
      if (train_names[static_cast<std::size_t>(j)] == test_names[static_cast<std::size_t>(i)]) mapped = j;
    require(mapped >= 0, "load_data: test label '" + test_names[static_cast<std::size_t>(i)] +
                             "' does not appear in the training file");
    to_train[i] = mapped;
  }
  for (auto& inst : test) inst.label = to_train.at(inst.label);
}

}  // namespace detail

inline LoadedData load_data(const config::RunConfig& cfg) {
  LoadedData out;
  if (cfg.format == "ucr") {
    auto train = data::parse_ucr_ts(cfg.dataset);
    out.train = std::move(train.instances);
    out.class_count = train.class_count;
    if (cfg.split_mode == "archive") {
      auto test = data::parse_ucr_ts(cfg.test_dataset);
      detail::remap_labels(test.instances, train.label_names, test.label_names);
      out.test = std::move(test.instances);
      out.class_count = std::max(out.class_count, test.class_count);
    }
  } else {  // speed matrix
    out.train = data::load_speed_matrix(cfg.dataset, cfg.window, cfg.stride);
    for (auto& inst : out.train) inst.label = data::label_congestion(inst, cfg.ffs_mph);
    if (cfg.split_mode == "archive") {
      out.test = data::load_speed_matrix(cfg.test_dataset, cfg.window, cfg.stride);
      for (auto& inst : out.test) inst.label = data::label_congestion(inst, cfg.ffs_mph);
    }
    out.class_count = 3;
  }
  detail::check_uniform(out.train);
  if (!out.test.empty()) {
    detail::check_uniform(out.test);
    require(out.test[0].length() == out.train[0].length() &&
                out.test[0].channels() == out.train[0].channels(),
            "load_data: train/test shape mismatch");
  }
  return out;
}

// ------------------------------------------------------------------ texts

inline std::vector<std::string> make_texts(const std::vector<data::TimeSeriesInstance>& insts,
                                           const config::RunConfig& cfg,
                                           const std::map<int, std::string>* sidecar = nullptr,
                                           text::TextGenClient* client = nullptr) {
  std::vector<std::string> out;
  out.reserve(insts.size());
  for (int i = 0; i < static_cast<int>(insts.size()); ++i) {
    if (sidecar) {
      auto it = sidecar->find(i);
      if (it != sidecar->end() && !it->second.empty()) {
        out.push_back(text::truncate_tokens(it->second, text::kMaxTokens));
        continue;
      }
    }
    text::TextTemplateInput meta;
    meta.topic = cfg.text_topic;
    meta.background = cfg.text_background;
    meta.position = cfg.text_position;
    out.push_back(text::generate_description(insts[static_cast<std::size_t>(i)], meta, client));
  }
  return out;
}

// --------------------------------------------------------------- encoding

inline std::vector<model::EncodedInstance> encode_set(
    const std::vector<data::TimeSeriesInstance>& insts, const std::vector<std::string>& texts,
    const data::NormStats& stats, const text::Vocabulary& vocab) {
  require(insts.size() == texts.size(), "encode_set: instance/text count mismatch");
  std::vector<model::EncodedInstance> out;
  out.reserve(insts.size());
  for (std::size_t i = 0; i < insts.size(); ++i) {
    model::EncodedInstance e;
    e.series = data::normalize(insts[i], stats).values;
    e.token_ids = vocab.encode(texts[i]);
    e.label = insts[i].label;
    out.push_back(std::move(e));
  }
  return out;
}

inline model::ModelConfig make_model_config(const config::RunConfig& cfg, int series_len,
                                            int channels, int num_classes, int vocab_size) {
  model::ModelConfig m;
  m.series_len = series_len;
  m.channels = channels;
  m.embed_dim = cfg.embed_dim;
  m.fusion_dim = cfg.fusion_dim;
  m.depth = cfg.depth;
  m.taps = cfg.taps;
  m.filters = cfg.filters;
  m.pool_width = cfg.pool_width;
  m.phi = cfg.phi;
  m.num_classes = num_classes;
  m.vocab_size = vocab_size;
  m.tau = cfg.tau;
  m.alpha = cfg.alpha;
  m.beta = cfg.beta;
  m.gamma = cfg.gamma;
  m.drop_vision = cfg.drop_vision;
  m.drop_text = cfg.drop_text;
  m.drop_timeseries = cfg.drop_timeseries;
  m.validate();
  return m;
}

// -------------------------------------------------------- checkpoint meta

inline std::string make_meta(const config::RunConfig& cfg, const model::ModelConfig& mcfg) {
  std::ostringstream os;
  os << "[run]\n" << config::echo(cfg);
  os << "[model]\n";
  os << "series_len = " << mcfg.series_len << "\n";
  os << "channels = " << mcfg.channels << "\n";
  os << "num_classes = " << mcfg.num_classes << "\n";
  os << "vocab_size = " << mcfg.vocab_size << "\n";
  return os.str();
}

struct ParsedMeta {
  config::RunConfig run;
  int series_len = 0, channels = 0, num_classes = 0, vocab_size = 0;
};

inline ParsedMeta parse_meta(const std::string& meta) {
  std::istringstream in(meta);
  std::string line, section;
  std::ostringstream run_part;
  ParsedMeta out;
  while (std::getline(in, line)) {
    if (line == "[run]" || line == "[model]") {
      section = line;
      continue;
    }
    if (section == "[run]") {
      run_part << line << "\n";
    } else if (section == "[model]") {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = config::detail::trim(line.substr(0, eq));
      const int value = std::stoi(config::detail::trim(line.substr(eq + 1)));
      if (key == "series_len") out.series_len = value;
      else if (key == "channels") out.channels = value;
      else if (key == "num_classes") out.num_classes = value;
      else if (key == "vocab_size") out.vocab_size = value;
      else throw std::runtime_error("checkpoint meta: unknown model key '" + key + "'");
    }
  }
  std::istringstream run_in(run_part.str());
  out.run = config::parse(run_in);
  require(out.series_len >= 2 && out.channels >= 1 && out.num_classes >= 2 && out.vocab_size >= 1,
          "checkpoint meta: missing model dimensions");
  return out;
}

inline std::vector<std::pair<std::string, Tensor>> norm_stat_tensors(const data::NormStats& st) {
  const int c = static_cast<int>(st.mean.size());
  Tensor mean({c}), sd({c});
  for (int i = 0; i < c; ++i) {
    mean.at(i) = st.mean[static_cast<std::size_t>(i)];
    sd.at(i) = st.std_dev[static_cast<std::size_t>(i)];
  }
  return {{"norm.mean", mean}, {"norm.std", sd}};
}

inline data::NormStats norm_stats_from(const checkpoint::Checkpoint& ckpt) {
  data::NormStats st;
  for (const auto& [name, t] : ckpt.tensors) {
    if (name == "norm.mean")
      for (std::size_t i = 0; i < t.numel(); ++i) st.mean.push_back(t[i]);
    else if (name == "norm.std")
      for (std::size_t i = 0; i < t.numel(); ++i) st.std_dev.push_back(t[i]);
  }
  require(!st.mean.empty() && st.mean.size() == st.std_dev.size(),
          "checkpoint: missing normalization statistics");
  return st;
}

// ----------------------------------------------------------------- runs

// One split with its texts, ready for vocabulary building and encoding.
struct PreparedSplit {
  data::DatasetSplit split;
  std::vector<std::string> train_texts, val_texts, test_texts;
};

inline std::vector<PreparedSplit> prepare_splits(const config::RunConfig& cfg,
                                                 const LoadedData& all, unsigned seed) {
  std::map<int, std::string> sidecar;
  const std::map<int, std::string>* sc = nullptr;
  if (!cfg.text_sidecar.empty()) {
    sidecar = text::read_sidecar(cfg.text_sidecar);
    sc = &sidecar;
  }

  std::vector<PreparedSplit> out;
  if (cfg.split_mode == "archive") {
    PreparedSplit p;
    p.split.train = all.train;
    p.split.val = all.test;  // monitoring only; the archive split has no held-out val
    p.split.test = all.test;
    p.split.class_count = all.class_count;
    p.split.stats = data::compute_norm_stats(p.split.train);
    for (int i = 0; i < static_cast<int>(all.train.size()); ++i) p.split.train_idx.push_back(i);
    p.train_texts = make_texts(p.split.train, cfg, sc);
    p.test_texts = make_texts(p.split.test, cfg);  // sidecar indexes the training file only
    p.val_texts = p.test_texts;
    out.push_back(std::move(p));
  } else {
    auto texts = make_texts(all.train, cfg, sc);
    auto splits = data::make_folds(all.train, cfg.folds, seed);
    for (auto& s : splits) {
      PreparedSplit p;
      for (int idx : s.train_idx) p.train_texts.push_back(texts[static_cast<std::size_t>(idx)]);
      for (int idx : s.val_idx) p.val_texts.push_back(texts[static_cast<std::size_t>(idx)]);
      for (int idx : s.test_idx) p.test_texts.push_back(texts[static_cast<std::size_t>(idx)]);
      p.split = std::move(s);
      out.push_back(std::move(p));
    }
  }
  return out;
}

struct FoldResult {
  metrics::MetricsReport test_metrics;
  train::History history;
  std::string checkpoint_path;
};

inline FoldResult run_fold(const config::RunConfig& cfg, const PreparedSplit& p, unsigned seed,
                           const std::string& ckpt_path) {
  auto vocab = text::Vocabulary::build(p.train_texts);
  auto mcfg = make_model_config(cfg, p.split.train[0].length(), p.split.train[0].channels(),
                                p.split.class_count, vocab.size());
  auto mdl = model::Model::init(mcfg, seed);

  auto train_set = encode_set(p.split.train, p.train_texts, p.split.stats, vocab);
  auto val_set = encode_set(p.split.val, p.val_texts, p.split.stats, vocab);
  auto test_set = encode_set(p.split.test, p.test_texts, p.split.stats, vocab);

  train::TrainConfig tcfg;
  tcfg.lr = cfg.lr;
  tcfg.weight_decay = cfg.weight_decay;
  tcfg.epochs = cfg.epochs;
  tcfg.batch_size = cfg.batch_size;
  tcfg.seed = seed;

  FoldResult r;
  r.history = train::train_epochs(mdl, train_set, val_set, tcfg);
  r.test_metrics = train::evaluate(mdl, test_set);
  r.checkpoint_path = ckpt_path;
  checkpoint::save(ckpt_path, checkpoint::from_model(mdl, make_meta(cfg, mcfg), vocab.tokens(),
                                                     norm_stat_tensors(p.split.stats)));
  return r;
}

struct ExperimentResult {
  std::vector<FoldResult> folds;  // repeats x folds, repeat-major
  metrics::MeanStd accuracy;
  metrics::MeanStd macro_f1;
  std::string metrics_path;
};

// Full protocol: `repeats` repetitions, each with its own seed and (in kfold
// mode) its own fold assignment. Artifacts land in cfg.out_dir and partial
// results are flushed as each fold finishes.
inline ExperimentResult run_experiment(const config::RunConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  {
    std::ofstream cf(cfg.out_dir + "/config.txt");
    cf << config::echo(cfg);
  }
  const auto all = load_data(cfg);

  ExperimentResult result;
  result.metrics_path = cfg.out_dir + "/metrics.txt";
  std::ofstream rec(result.metrics_path);
  if (!rec) throw std::runtime_error("run_experiment: cannot open " + result.metrics_path);

  std::vector<double> accs, f1s;
  for (int r = 0; r < cfg.repeats; ++r) {
    const unsigned seed_r = cfg.seed + static_cast<unsigned>(r);
    auto prepared = prepare_splits(cfg, all, seed_r);
    if (cfg.split_mode == "kfold") {
      std::vector<data::DatasetSplit> raw;
      for (const auto& p : prepared) raw.push_back(p.split);
      data::write_split_cache(cfg.out_dir + "/splits_r" + std::to_string(r) + ".txt", raw);
    }
    for (std::size_t f = 0; f < prepared.size(); ++f) {
      const std::string ckpt = cfg.out_dir + "/ckpt_r" + std::to_string(r) + "_f" +
                               std::to_string(f) + ".mtpc";
      auto fr = run_fold(cfg, prepared[f], seed_r + static_cast<unsigned>(f) * 1000u, ckpt);
      rec << to_record(fr.test_metrics,
                       "repeat" + std::to_string(r) + ".fold" + std::to_string(f) + ".");
      rec.flush();
      accs.push_back(fr.test_metrics.accuracy);
      f1s.push_back(fr.test_metrics.macro_f1);
      result.folds.push_back(std::move(fr));
    }
  }
  result.accuracy = metrics::mean_std(accs);
  result.macro_f1 = metrics::mean_std(f1s);
  rec << std::setprecision(10) << std::fixed;
  rec << "aggregate.accuracy.mean = " << result.accuracy.mean << "\n";
  rec << "aggregate.accuracy.std = " << result.accuracy.std_dev << "\n";
  rec << "aggregate.macro_f1.mean = " << result.macro_f1.mean << "\n";
  rec << "aggregate.macro_f1.std = " << result.macro_f1.std_dev << "\n";
  return result;
}

// Ablation: one variant per call, dropping exactly the named branch.
inline ExperimentResult run_ablation(config::RunConfig cfg, const std::string& variant) {
  if (variant == "vision")
    cfg.drop_vision = true;
  else if (variant == "text")
    cfg.drop_text = true;
  else if (variant == "timeseries")
    cfg.drop_timeseries = true;
  else
    throw std::invalid_argument("run_ablation: variant must be vision|text|timeseries");
  cfg.out_dir += "/ablate-" + variant;
  return run_experiment(cfg);
}

// ------------------------------------------------------------- evaluation

struct CheckpointModel {
  model::Model mdl;
  text::Vocabulary vocab;
  data::NormStats stats;
  ParsedMeta meta;
};

inline CheckpointModel load_checkpoint_model(const std::string& path) {
  auto ckpt = checkpoint::load(path);
  CheckpointModel out;
  out.meta = parse_meta(ckpt.meta);
  out.vocab = text::Vocabulary::from_tokens(ckpt.vocab_tokens);
  out.stats = norm_stats_from(ckpt);
  auto mcfg = make_model_config(out.meta.run, out.meta.series_len, out.meta.channels,
                                out.meta.num_classes, out.meta.vocab_size);
  out.mdl = model::Model::init(mcfg, 0);
  checkpoint::restore_params(out.mdl, ckpt);
  return out;
}

// Evaluates a saved checkpoint on a dataset described by `eval_cfg` (only the
// data-related keys are used; the model configuration comes from the
// checkpoint).
inline metrics::MetricsReport evaluate_checkpoint(const std::string& ckpt_path,
                                                  const config::RunConfig& eval_cfg) {
  auto cm = load_checkpoint_model(ckpt_path);
  auto all = load_data(eval_cfg);
  std::map<int, std::string> sidecar;
  const std::map<int, std::string>* sc = nullptr;
  if (!eval_cfg.text_sidecar.empty()) {
    sidecar = text::read_sidecar(eval_cfg.text_sidecar);
    sc = &sidecar;
  }
  auto texts = make_texts(all.train, eval_cfg, sc);
  auto encoded = encode_set(all.train, texts, cm.stats, cm.vocab);
  return train::evaluate(cm.mdl, encoded);
}

// --------------------------------------------------------- feature export

namespace detail {

// Top-2 PCA by deterministic power iteration with deflation. Sign fixed so
// the largest-magnitude loading is positive; degenerate directions project
// to zero.
inline std::vector<Tensor> pca2_components(const Tensor& x) {
  const int n = x.dim(0), d = x.dim(1);
  std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) mean[static_cast<std::size_t>(j)] += x.at(i, j) / n;
  Tensor cov({d, d});
  for (int i = 0; i < n; ++i)
    for (int a = 0; a < d; ++a) {
      const double va = x.at(i, a) - mean[static_cast<std::size_t>(a)];
      for (int b = 0; b < d; ++b)
        cov.at(a, b) += va * (x.at(i, b) - mean[static_cast<std::size_t>(b)]) / n;
    }

  std::vector<Tensor> comps;
  for (int c = 0; c < 2; ++c) {
    Tensor v({d});
    for (int j = 0; j < d; ++j) v.at(j) = std::sin(static_cast<double>(j + 1 + c));
    for (int it = 0; it < 256; ++it) {
      Tensor next({d});
      for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b) next.at(a) += cov.at(a, b) * v.at(b);
      double norm = 0.0;
      for (int j = 0; j < d; ++j) norm += next.at(j) * next.at(j);
      norm = std::sqrt(norm);
      if (norm < 1e-12) {
        next.fill(0.0);
        v = next;
        break;
      }
      for (int j = 0; j < d; ++j) next.at(j) /= norm;
      v = next;
    }
    // Eigenvalue and sign convention.
    double lambda = 0.0;
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) lambda += v.at(a) * cov.at(a, b) * v.at(b);
    int arg = 0;
    for (int j = 1; j < d; ++j)
      if (std::abs(v.at(j)) > std::abs(v.at(arg))) arg = j;
    if (v.at(arg) < 0.0)
      for (int j = 0; j < d; ++j) v.at(j) = -v.at(j);
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) cov.at(a, b) -= lambda * v.at(a) * v.at(b);
    comps.push_back(std::move(v));
  }

  // Projections of the centered rows onto each component.
  std::vector<Tensor> proj;
  for (const auto& v : comps) {
    Tensor p({n});
    for (int i = 0; i < n; ++i) {
      double acc = 0.0;
      for (int j = 0; j < d; ++j) acc += (x.at(i, j) - mean[static_cast<std::size_t>(j)]) * v.at(j);
      p.at(i) = acc;
    }
    proj.push_back(std::move(p));
  }
  return proj;
}

inline void print_csv_value(std::ostream& os, double v) {
  os << std::setprecision(10) << std::fixed << v;
}

}  // namespace detail

// Writes one CSV row per instance: label, the four d-wide feature vectors
// (time-series, image, text, fused) and the 2D PCA projection of each set.
inline void export_features(model::Model& mdl, const std::vector<model::EncodedInstance>& data,
                            const std::string& csv_path) {
  require(!data.empty(), "export_features: empty dataset");
  const int d = mdl.cfg.fusion_dim;
  const int n = static_cast<int>(data.size());
  Tensor ts({n, d}), img({n, d}), txt({n, d}), fused({n, d});

  int row = 0;
  for (std::size_t start = 0; start < data.size(); start += 64) {
    const std::size_t end = std::min(data.size(), start + 64);
    std::vector<model::EncodedInstance> batch(data.begin() + static_cast<std::ptrdiff_t>(start),
                                              data.begin() + static_cast<std::ptrdiff_t>(end));
    ad::Graph g;
    model::BatchBuilder builder(g, mdl);
    auto out = builder.forward(batch, /*with_losses=*/false);
    const Tensor& xv = g.value(out.x_v);
    const Tensor& xg = g.value(out.x_g);
    const Tensor& xt = g.value(out.x_t);
    const Tensor& xf = g.value(out.fused);
    for (int i = 0; i < static_cast<int>(batch.size()); ++i, ++row)
      for (int j = 0; j < d; ++j) {
        ts.at(row, j) = xv.at(i, j);
        img.at(row, j) = xg.at(i, j);
        txt.at(row, j) = xt.at(i, j);
        fused.at(row, j) = xf.at(i, j);
      }
  }

  auto ts_pc = detail::pca2_components(ts);
  auto img_pc = detail::pca2_components(img);
  auto txt_pc = detail::pca2_components(txt);
  auto fused_pc = detail::pca2_components(fused);

  std::ofstream os(csv_path);
  if (!os) throw std::runtime_error("export_features: cannot open " + csv_path);
  os << "label";
  for (const char* set : {"ts", "img", "txt", "fused"})
    for (int j = 0; j < d; ++j) os << "," << set << "_" << j;
  for (const char* set : {"ts", "img", "txt", "fused"}) os << "," << set << "_pc1," << set << "_pc2";
  os << "\n";
  for (int i = 0; i < n; ++i) {
    os << data[static_cast<std::size_t>(i)].label;
    for (const Tensor* m : {&ts, &img, &txt, &fused})
      for (int j = 0; j < d; ++j) {
        os << ",";
        detail::print_csv_value(os, m->at(i, j));
      }
    for (const auto* pc : {&ts_pc, &img_pc, &txt_pc, &fused_pc})
      for (int c = 0; c < 2; ++c) {
        os << ",";
        detail::print_csv_value(os, (*pc)[static_cast<std::size_t>(c)].at(i));
      }
    os << "\n";
  }
}

// ------------------------------------------------------------- PGM export

// 8-bit binary PGM, min-max normalized (flat images render mid-gray).
inline void write_pgm(const std::string& path, const Tensor& img) {
  require(img.rank() == 2 || (img.rank() == 3 && img.dim(0) == 1), "write_pgm: expected one 2D map");
  const int h = img.rank() == 2 ? img.dim(0) : img.dim(1);
  const int w = img.rank() == 2 ? img.dim(1) : img.dim(2);
  double lo = img[0], hi = img[0];
  for (std::size_t i = 0; i < img.numel(); ++i) {
    lo = std::min(lo, img[i]);
    hi = std::max(hi, img[i]);
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_pgm: cannot open " + path);
  os << "P5\n" << w << " " << h << "\n255\n";
  for (std::size_t i = 0; i < img.numel(); ++i) {
    const double t = hi - lo < 1e-12 ? 0.5 : (img[i] - lo) / (hi - lo);
    os.put(static_cast<char>(static_cast<int>(t * 255.0 + 0.5)));
  }
}

// Debug export of the generated image for one instance.
inline void export_generated_image(model::Model& mdl, const model::EncodedInstance& inst,
                                   const std::string& path) {
  ad::Graph g;
  model::BatchBuilder builder(g, mdl);
  const auto c = model::detail::make_consts(g, mdl);
  ad::Var img = builder.generate_image(inst.series, c);
  write_pgm(path, g.value(img));
}

}  // namespace mtp::experiment
