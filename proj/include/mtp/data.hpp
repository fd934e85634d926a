#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mtp/tensor.hpp"

// Dataset ingestion: UCR-style archives, raw speed matrices, congestion
// labeling, stratified folds and train-only normalization statistics.
namespace mtp::data {

constexpr int kUnlabeled = -1;

struct InstanceMeta {
  std::string source_id;
  std::optional<double> start_timestamp;
  std::optional<double> sampling_period;
  std::string units;
};

struct TimeSeriesInstance {
  Tensor values;  // [length, channels]
  int label = kUnlabeled;
  InstanceMeta meta;

  int length() const { return values.dim(0); }
  int channels() const { return values.dim(1); }
};

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

[[noreturn]] inline void fail(const std::string& what, int line_no) {
  throw ParseError(what + " (line " + std::to_string(line_no) + ")");
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

inline bool is_missing_token(const std::string& tok) {
  const std::string t = lower(trim(tok));
  return t.empty() || t == "?" || t == "nan";
}

// Linear interpolation over NaN runs; edge runs copy the nearest value.
inline void impute_channel(std::vector<double>& v) {
  const int n = static_cast<int>(v.size());
  int first = -1;
  for (int i = 0; i < n; ++i)
    if (!std::isnan(v[static_cast<std::size_t>(i)])) {
      first = i;
      break;
    }
  require(first >= 0, "impute: channel has no observed values");
  for (int i = 0; i < first; ++i) v[static_cast<std::size_t>(i)] = v[static_cast<std::size_t>(first)];
  int prev = first;
  for (int i = first + 1; i < n; ++i) {
    if (std::isnan(v[static_cast<std::size_t>(i)])) continue;
    if (i > prev + 1) {
      const double a = v[static_cast<std::size_t>(prev)], b = v[static_cast<std::size_t>(i)];
      for (int j = prev + 1; j < i; ++j)
        v[static_cast<std::size_t>(j)] = a + (b - a) * (j - prev) / static_cast<double>(i - prev);
    }
    prev = i;
  }
  for (int i = prev + 1; i < n; ++i) v[static_cast<std::size_t>(i)] = v[static_cast<std::size_t>(prev)];
}

}  // namespace detail

struct UcrDataset {
  std::vector<TimeSeriesInstance> instances;
  int class_count = 0;
  std::vector<std::string> label_names;  // original tokens, index = mapped id
};

// Parses the archive's text layout: '@' header directives, then one record
// per line with ':'-separated dimensions and the class label last. Missing
// markers ('?'/'NaN') are imputed by per-channel linear interpolation.
// Labels are mapped to contiguous ids in first-appearance order.
inline UcrDataset parse_ucr_ts(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("parse_ucr_ts: cannot open " + path);

  UcrDataset out;
  std::map<std::string, int> label_ids;
  std::set<std::string> declared_labels;
  bool saw_data_directive = false;
  bool saw_header = false;
  std::string line;
  int line_no = 0;
  int record_no = 0;

  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t[0] == '@') {
      const std::string dl = detail::lower(t);
      if (dl.rfind("@data", 0) == 0) {
        saw_data_directive = true;
      } else {
        saw_header = true;
        if (dl.rfind("@classlabel", 0) == 0) {
          // "@classLabel true A B C" declares the legal label tokens.
          std::stringstream ds(t);
          std::string tok;
          ds >> tok >> tok;  // directive name, true/false flag
          if (detail::lower(tok) == "true")
            while (ds >> tok) declared_labels.insert(tok);
        }
      }
      continue;
    }
    if (!saw_data_directive) detail::fail("parse_ucr_ts: record before @data directive", line_no);

    // Split into dimensions; the label rides after the final ':'.
    std::vector<std::string> parts;
    std::stringstream ss(t);
    std::string part;
    while (std::getline(ss, part, ':')) parts.push_back(part);
    if (parts.size() < 2) detail::fail("parse_ucr_ts: record has no label field", line_no);

    const std::string label_tok = detail::trim(parts.back());
    if (label_tok.empty()) detail::fail("parse_ucr_ts: empty label token", line_no);
    if (!declared_labels.empty() && !declared_labels.count(label_tok))
      detail::fail("parse_ucr_ts: unknown label token '" + label_tok + "'", line_no);
    parts.pop_back();

    std::vector<std::vector<double>> channels;
    for (const auto& dim : parts) {
      std::vector<double> vals;
      std::stringstream ds(dim);
      std::string cell;
      while (std::getline(ds, cell, ',')) {
        if (detail::is_missing_token(cell)) {
          vals.push_back(std::numeric_limits<double>::quiet_NaN());
        } else {
          const std::string c = detail::trim(cell);
          try {
            std::size_t used = 0;
            const double v = std::stod(c, &used);
            if (used != c.size()) throw std::invalid_argument("trailing characters");
            vals.push_back(v);
          } catch (const std::exception&) {
            detail::fail("parse_ucr_ts: unparsable value '" + c + "'", line_no);
          }
        }
      }
      if (vals.empty()) detail::fail("parse_ucr_ts: empty dimension", line_no);
      channels.push_back(std::move(vals));
    }
    for (std::size_t c = 1; c < channels.size(); ++c)
      if (channels[c].size() != channels[0].size())
        detail::fail("parse_ucr_ts: ragged channel lengths within record", line_no);

    for (auto& ch : channels) detail::impute_channel(ch);

    int label;
    auto it = label_ids.find(label_tok);
    if (it == label_ids.end()) {
      label = static_cast<int>(label_ids.size());
      label_ids.emplace(label_tok, label);
      out.label_names.push_back(label_tok);
    } else {
      label = it->second;
    }

    const int len = static_cast<int>(channels[0].size());
    const int c_n = static_cast<int>(channels.size());
    Tensor values({len, c_n});
    for (int i = 0; i < len; ++i)
      for (int c = 0; c < c_n; ++c) values.at(i, c) = channels[static_cast<std::size_t>(c)][static_cast<std::size_t>(i)];

    TimeSeriesInstance inst;
    inst.values = std::move(values);
    inst.label = label;
    inst.meta.source_id = path + "#" + std::to_string(record_no++);
    out.instances.push_back(std::move(inst));
  }

  if (!saw_data_directive) {
    if (!saw_header) throw ParseError("parse_ucr_ts: missing header directives in " + path);
    throw ParseError("parse_ucr_ts: missing @data directive in " + path);
  }
  out.class_count = static_cast<int>(label_ids.size());
  return out;
}

// Loads a delimited speed matrix (rows = timestamps, columns = sensors) and
// slices each sensor column into unlabeled windows. Zero readings are sensor
// dropouts: imputed when possible, dropped when the whole window is missing.
inline std::vector<TimeSeriesInstance> load_speed_matrix(const std::string& path, int window,
                                                         int stride) {
  require(window >= 2, "load_speed_matrix: window must be >= 2");
  require(stride >= 1, "load_speed_matrix: stride must be >= 1");
  std::ifstream in(path);
  if (!in) throw ParseError("load_speed_matrix: cannot open " + path);

  std::vector<std::vector<double>> rows;
  std::vector<std::string> header;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(t);
    std::string cell;
    bool numeric = true;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(detail::trim(cell));
    for (const auto& c : cells) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(c, &used));
        if (used != c.size()) numeric = false;
      } catch (const std::exception&) {
        numeric = false;
      }
      if (!numeric) break;
    }
    if (!numeric) {
      // A non-numeric first row is an optional header; anywhere else it is an error.
      if (rows.empty() && header.empty()) {
        header = cells;
        continue;
      }
      detail::fail("load_speed_matrix: non-numeric cell", line_no);
    }
    if (!rows.empty() && row.size() != rows[0].size())
      detail::fail("load_speed_matrix: ragged row", line_no);
    rows.push_back(std::move(row));
  }
  require(!rows.empty(), "load_speed_matrix: empty matrix");
  const int t_n = static_cast<int>(rows.size());
  const int s_n = static_cast<int>(rows[0].size());
  require(window <= t_n, "load_speed_matrix: window exceeds row count");

  std::vector<TimeSeriesInstance> out;
  for (int s = 0; s < s_n; ++s) {
    for (int start = 0; start + window <= t_n; start += stride) {
      std::vector<double> vals(static_cast<std::size_t>(window));
      bool any_observed = false;
      for (int i = 0; i < window; ++i) {
        const double v = rows[static_cast<std::size_t>(start + i)][static_cast<std::size_t>(s)];
        if (v == 0.0) {
          vals[static_cast<std::size_t>(i)] = std::numeric_limits<double>::quiet_NaN();
        } else {
          vals[static_cast<std::size_t>(i)] = v;
          any_observed = true;
        }
      }
      if (!any_observed) continue;  // fully-missing window, dropped
      detail::impute_channel(vals);
      TimeSeriesInstance inst;
      inst.values = Tensor({window, 1}, std::move(vals));
      inst.label = kUnlabeled;
      inst.meta.source_id = header.empty() || s >= static_cast<int>(header.size())
                                ? "sensor" + std::to_string(s)
                                : header[static_cast<std::size_t>(s)];
      inst.meta.start_timestamp = static_cast<double>(start);
      inst.meta.units = "mph";
      out.push_back(std::move(inst));
    }
  }
  return out;
}

// Congestion classes from percentage-of-free-flow-speed thresholds:
// mean speed < 40 -> High (2), in [40, 60] -> Moderate (1), > 60 -> Low (0).
enum Congestion { kLowCongestion = 0, kModerateCongestion = 1, kHighCongestion = 2 };

inline int label_congestion(const TimeSeriesInstance& instance, double ffs_mph = 65.0) {
  require(ffs_mph > 0.0, "label_congestion: free-flow speed must be positive");
  require(instance.values.numel() > 0 && instance.length() >= 1, "label_congestion: empty window");
  double mean = 0.0;
  for (std::size_t i = 0; i < instance.values.numel(); ++i) mean += instance.values[i];
  mean /= static_cast<double>(instance.values.numel());
  if (mean < 40.0) return kHighCongestion;
  if (mean <= 60.0) return kModerateCongestion;
  return kLowCongestion;
}

struct NormStats {
  std::vector<double> mean;  // per channel
  std::vector<double> std_dev;
};

inline NormStats compute_norm_stats(const std::vector<TimeSeriesInstance>& train) {
  require(!train.empty(), "compute_norm_stats: empty train split");
  const int c_n = train[0].channels();
  NormStats st{std::vector<double>(static_cast<std::size_t>(c_n), 0.0),
               std::vector<double>(static_cast<std::size_t>(c_n), 0.0)};
  std::vector<std::size_t> counts(static_cast<std::size_t>(c_n), 0);
  for (const auto& inst : train)
    for (int i = 0; i < inst.length(); ++i)
      for (int c = 0; c < c_n; ++c) {
        st.mean[static_cast<std::size_t>(c)] += inst.values.at(i, c);
        ++counts[static_cast<std::size_t>(c)];
      }
  for (int c = 0; c < c_n; ++c) st.mean[static_cast<std::size_t>(c)] /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
  for (const auto& inst : train)
    for (int i = 0; i < inst.length(); ++i)
      for (int c = 0; c < c_n; ++c) {
        const double d = inst.values.at(i, c) - st.mean[static_cast<std::size_t>(c)];
        st.std_dev[static_cast<std::size_t>(c)] += d * d;
      }
  for (int c = 0; c < c_n; ++c) {
    st.std_dev[static_cast<std::size_t>(c)] =
        std::sqrt(st.std_dev[static_cast<std::size_t>(c)] / static_cast<double>(counts[static_cast<std::size_t>(c)]));
    if (st.std_dev[static_cast<std::size_t>(c)] < 1e-12) st.std_dev[static_cast<std::size_t>(c)] = 1.0;
  }
  return st;
}

inline TimeSeriesInstance normalize(const TimeSeriesInstance& inst, const NormStats& st) {
  TimeSeriesInstance out = inst;
  for (int i = 0; i < out.length(); ++i)
    for (int c = 0; c < out.channels(); ++c)
      out.values.at(i, c) =
          (out.values.at(i, c) - st.mean[static_cast<std::size_t>(c)]) / st.std_dev[static_cast<std::size_t>(c)];
  return out;
}

struct DatasetSplit {
  std::vector<TimeSeriesInstance> train;
  std::vector<TimeSeriesInstance> val;
  std::vector<TimeSeriesInstance> test;
  int class_count = 0;
  int fold_index = 0;
  NormStats stats;  // train-only
  // Index lists into the source dataset, kept for the split cache file.
  std::vector<int> train_idx, val_idx, test_idx;
};

// Stratified k folds, deterministic under the seed. Fold i is the test set,
// fold (i+1) mod k the validation set, the rest is train. Falls back to plain
// shuffling with a warning when a class has fewer than k members.
inline std::vector<DatasetSplit> make_folds(const std::vector<TimeSeriesInstance>& data, int k,
                                            unsigned seed) {
  require(k >= 3, "make_folds: k must be >= 3 (one fold each for test and validation)");
  require(k <= static_cast<int>(data.size()), "make_folds: k exceeds instance count");

  int class_count = 0;
  std::map<int, std::vector<int>> by_class;
  for (int i = 0; i < static_cast<int>(data.size()); ++i) {
    require(data[static_cast<std::size_t>(i)].label != kUnlabeled, "make_folds: unlabeled instance");
    by_class[data[static_cast<std::size_t>(i)].label].push_back(i);
    class_count = std::max(class_count, data[static_cast<std::size_t>(i)].label + 1);
  }

  bool stratify = true;
  for (const auto& [cls, idxs] : by_class)
    if (static_cast<int>(idxs.size()) < k) stratify = false;
  if (!stratify)
    std::cerr << "make_folds: some class has fewer than k instances; "
                 "falling back to unstratified shuffling\n";

  std::mt19937 rng(seed);
  std::vector<std::vector<int>> folds(static_cast<std::size_t>(k));
  if (stratify) {
    int next_fold = 0;
    for (auto& [cls, idxs] : by_class) {
      std::shuffle(idxs.begin(), idxs.end(), rng);
      for (int idx : idxs) folds[static_cast<std::size_t>(next_fold++ % k)].push_back(idx);
    }
  } else {
    std::vector<int> all(data.size());
    for (int i = 0; i < static_cast<int>(all.size()); ++i) all[static_cast<std::size_t>(i)] = i;
    std::shuffle(all.begin(), all.end(), rng);
    for (int i = 0; i < static_cast<int>(all.size()); ++i)
      folds[static_cast<std::size_t>(i % k)].push_back(all[static_cast<std::size_t>(i)]);
  }

  std::vector<DatasetSplit> splits;
  for (int f = 0; f < k; ++f) {
    DatasetSplit split;
    split.fold_index = f;
    split.class_count = class_count;
    split.test_idx = folds[static_cast<std::size_t>(f)];
    split.val_idx = folds[static_cast<std::size_t>((f + 1) % k)];
    for (int g = 0; g < k; ++g) {
      if (g == f || g == (f + 1) % k) continue;
      for (int idx : folds[static_cast<std::size_t>(g)]) split.train_idx.push_back(idx);
    }
    std::sort(split.train_idx.begin(), split.train_idx.end());
    std::sort(split.val_idx.begin(), split.val_idx.end());
    std::sort(split.test_idx.begin(), split.test_idx.end());
    for (int idx : split.train_idx) split.train.push_back(data[static_cast<std::size_t>(idx)]);
    for (int idx : split.val_idx) split.val.push_back(data[static_cast<std::size_t>(idx)]);
    for (int idx : split.test_idx) split.test.push_back(data[static_cast<std::size_t>(idx)]);
    split.stats = compute_norm_stats(split.train);
    splits.push_back(std::move(split));
  }
  return splits;
}

// Split cache record file: format tag, per-fold index lists and train stats.
inline void write_split_cache(const std::string& path, const std::vector<DatasetSplit>& splits) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_split_cache: cannot open " + path);
  out << "mtp-splits-v1\n";
  out << "folds " << splits.size() << "\n";
  out.precision(17);
  for (const auto& s : splits) {
    out << "fold " << s.fold_index << "\n";
    auto emit = [&](const char* name, const std::vector<int>& idx) {
      out << name;
      for (int i : idx) out << " " << i;
      out << "\n";
    };
    emit("train", s.train_idx);
    emit("val", s.val_idx);
    emit("test", s.test_idx);
    out << "mean";
    for (double m : s.stats.mean) out << " " << m;
    out << "\nstd";
    for (double v : s.stats.std_dev) out << " " << v;
    out << "\n";
  }
}

inline std::vector<DatasetSplit> read_split_cache(const std::string& path,
                                                  const std::vector<TimeSeriesInstance>& data) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_split_cache: cannot open " + path);
  std::string tag;
  std::getline(in, tag);
  if (detail::trim(tag) != "mtp-splits-v1")
    throw std::runtime_error("read_split_cache: unknown format tag '" + tag + "'");
  std::string word;
  int fold_count = 0;
  in >> word >> fold_count;
  require(word == "folds", "read_split_cache: malformed header");
  std::vector<DatasetSplit> splits;
  int class_count = 0;
  for (const auto& inst : data) class_count = std::max(class_count, inst.label + 1);
  for (int f = 0; f < fold_count; ++f) {
    DatasetSplit s;
    in >> word >> s.fold_index;
    require(word == "fold", "read_split_cache: malformed fold record");
    s.class_count = class_count;
    auto read_idx = [&](const char* name, std::vector<int>& idx, std::vector<TimeSeriesInstance>& insts) {
      in >> word;
      require(word == name, "read_split_cache: malformed section");
      std::string rest;
      std::getline(in, rest);
      std::stringstream ss(rest);
      int v;
      while (ss >> v) {
        idx.push_back(v);
        insts.push_back(data.at(static_cast<std::size_t>(v)));
      }
    };
    read_idx("train", s.train_idx, s.train);
    read_idx("val", s.val_idx, s.val);
    read_idx("test", s.test_idx, s.test);
    in >> word;
    require(word == "mean", "read_split_cache: malformed stats");
    {
      std::string rest;
      std::getline(in, rest);
      std::stringstream ss(rest);
      double v;
      while (ss >> v) s.stats.mean.push_back(v);
    }
    in >> word;
    require(word == "std", "read_split_cache: malformed stats");
    {
      std::string rest;
      std::getline(in, rest);
      std::stringstream ss(rest);
      double v;
      while (ss >> v) s.stats.std_dev.push_back(v);
    }
    splits.push_back(std::move(s));
  }
  return splits;
}

}  // namespace mtp::data
