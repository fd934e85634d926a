#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "mtp/tensor.hpp"

// Flat key=value run configuration. Unknown keys are errors; the echoed form
// reparses to an identical config.
namespace mtp::config {

struct RunConfig {
  std::string dataset;            // path to the training data
  std::string format = "ucr";     // ucr | speed
  std::string test_dataset;       // archive-mode test file (ucr)
  std::string split_mode = "kfold";  // archive | kfold
  int window = 12;
  int stride = 12;
  double ffs_mph = 65.0;
  double phi = 24.0;
  int embed_dim = 32;
  int fusion_dim = 128;
  int depth = 2;
  int taps = 9;
  int filters = 8;
  int pool_width = 3;
  double alpha = 0.1;
  double beta = 0.1;
  double gamma = 1.0;
  double tau = 0.07;
  double lr = 1e-4;
  double weight_decay = 0.01;
  int epochs = 50;
  int batch_size = 64;
  int folds = 5;
  int repeats = 3;   // desk-scale default; the full protocol uses 15
  unsigned seed = 42;
  bool drop_vision = false;
  bool drop_text = false;
  bool drop_timeseries = false;
  std::string out_dir = "mtp-out";
  std::string text_sidecar;
  std::string text_topic = "urban traffic profiling";
  std::string text_background = "road sensor network";
  std::string text_position = "unspecified location";

  void validate() const {
    require(!dataset.empty(), "config: dataset is required");
    require(format == "ucr" || format == "speed", "config: format must be ucr|speed");
    require(split_mode == "archive" || split_mode == "kfold",
            "config: split_mode must be archive|kfold");
    require(split_mode != "archive" || !test_dataset.empty(),
            "config: archive split mode requires test_dataset");
    require(window >= 2 && stride >= 1, "config: bad window/stride");
    require(ffs_mph > 0.0 && phi > 0.0, "config: ffs_mph and phi must be positive");
    require(embed_dim >= 1 && fusion_dim >= 2 && depth >= 1, "config: bad model widths");
    require(taps >= 2 && filters >= 1 && pool_width >= 1, "config: bad spectral parameters");
    require(alpha >= 0.0 && beta >= 0.0 && gamma >= 0.0, "config: negative loss weight");
    require(tau > 0.0, "config: tau must be positive");
    require(lr > 0.0 && weight_decay >= 0.0, "config: bad optimizer parameters");
    require(epochs >= 1 && batch_size >= 1, "config: bad schedule");
    require(folds >= 3 && repeats >= 1, "config: bad folds/repeats");
    const int dropped = (drop_vision ? 1 : 0) + (drop_text ? 1 : 0) + (drop_timeseries ? 1 : 0);
    require(dropped <= 2, "config: at most two ablation flags may be set");
    require(!out_dir.empty(), "config: out_dir is required");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename F>
void for_each_key(RunConfig& c, F&& f) {
  f("dataset", c.dataset);
  f("format", c.format);
  f("test_dataset", c.test_dataset);
  f("split_mode", c.split_mode);
  f("window", c.window);
  f("stride", c.stride);
  f("ffs_mph", c.ffs_mph);
  f("phi", c.phi);
  f("embed_dim", c.embed_dim);
  f("fusion_dim", c.fusion_dim);
  f("depth", c.depth);
  f("taps", c.taps);
  f("filters", c.filters);
  f("pool_width", c.pool_width);
  f("alpha", c.alpha);
  f("beta", c.beta);
  f("gamma", c.gamma);
  f("tau", c.tau);
  f("lr", c.lr);
  f("weight_decay", c.weight_decay);
  f("epochs", c.epochs);
  f("batch_size", c.batch_size);
  f("folds", c.folds);
  f("repeats", c.repeats);
  f("seed", c.seed);
  f("drop_vision", c.drop_vision);
  f("drop_text", c.drop_text);
  f("drop_timeseries", c.drop_timeseries);
  f("out_dir", c.out_dir);
  f("text_sidecar", c.text_sidecar);
  f("text_topic", c.text_topic);
  f("text_background", c.text_background);
  f("text_position", c.text_position);
}

inline void assign(std::string& dst, const std::string& v) { dst = v; }
inline void assign(int& dst, const std::string& v) { dst = std::stoi(v); }
inline void assign(unsigned& dst, const std::string& v) { dst = static_cast<unsigned>(std::stoul(v)); }
inline void assign(double& dst, const std::string& v) { dst = std::stod(v); }
inline void assign(bool& dst, const std::string& v) {
  if (v == "1" || v == "true")
    dst = true;
  else if (v == "0" || v == "false")
    dst = false;
  else
    throw std::invalid_argument("config: bad boolean '" + v + "'");
}

inline std::string render(const std::string& v) { return v; }
inline std::string render(int v) { return std::to_string(v); }
inline std::string render(unsigned v) { return std::to_string(v); }
inline std::string render(bool v) { return v ? "1" : "0"; }
inline std::string render(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

inline RunConfig parse(std::istream& in) {
  RunConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: missing '=' at line " + std::to_string(line_no));
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string value = detail::trim(t.substr(eq + 1));
    bool found = false;
    detail::for_each_key(cfg, [&](const char* name, auto& field) {
      if (key == name) {
        detail::assign(field, value);
        found = true;
      }
    });
    if (!found)
      throw std::invalid_argument("config: unknown key '" + key + "' at line " + std::to_string(line_no));
  }
  return cfg;
}

inline RunConfig parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  return parse(in);
}

inline std::string echo(const RunConfig& cfg) {
  std::ostringstream os;
  detail::for_each_key(const_cast<RunConfig&>(cfg), [&](const char* name, auto& field) {
    os << name << " = " << detail::render(field) << "\n";
  });
  return os.str();
}

}  // namespace mtp::config
