#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mtp/tensor.hpp"

namespace mtp::metrics {

// Confusion-matrix-backed classification report. Macro averages are
// unweighted over classes; a 0/0 per-class precision or recall counts as 0.
struct MetricsReport {
  int class_count = 0;
  std::vector<int> confusion;  // [m*m], row = true class, col = predicted

  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;

  int& cell(int truth, int pred) { return confusion[static_cast<std::size_t>(truth) * class_count + pred]; }
  int cell(int truth, int pred) const { return confusion[static_cast<std::size_t>(truth) * class_count + pred]; }
};

inline MetricsReport compute_metrics(const std::vector<int>& truth, const std::vector<int>& pred,
                                     int class_count) {
  require(truth.size() == pred.size() && !truth.empty(), "compute_metrics: size mismatch");
  require(class_count >= 1, "compute_metrics: bad class count");
  MetricsReport r;
  r.class_count = class_count;
  r.confusion.assign(static_cast<std::size_t>(class_count) * class_count, 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    require(truth[i] >= 0 && truth[i] < class_count, "compute_metrics: truth label out of range");
    require(pred[i] >= 0 && pred[i] < class_count, "compute_metrics: prediction out of range");
    ++r.cell(truth[i], pred[i]);
  }
  int correct = 0;
  for (int c = 0; c < class_count; ++c) correct += r.cell(c, c);
  r.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());

  double psum = 0.0, rsum = 0.0, fsum = 0.0;
  for (int c = 0; c < class_count; ++c) {
    int tp = r.cell(c, c), fp = 0, fn = 0;
    for (int o = 0; o < class_count; ++o) {
      if (o == c) continue;
      fp += r.cell(o, c);
      fn += r.cell(c, o);
    }
    const double prec = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
    const double rec = (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    const double f1 = (prec + rec) > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    psum += prec;
    rsum += rec;
    fsum += f1;
  }
  r.macro_precision = psum / class_count;
  r.macro_recall = rsum / class_count;
  r.macro_f1 = fsum / class_count;
  return r;
}

// Mean and sample standard deviation helpers for repeat aggregation.
struct MeanStd {
  double mean = 0.0;
  double std_dev = 0.0;
};

inline MeanStd mean_std(const std::vector<double>& xs) {
  require(!xs.empty(), "mean_std: empty sample");
  MeanStd out;
  for (double x : xs) out.mean += x;
  out.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double acc = 0.0;
    for (double x : xs) acc += (x - out.mean) * (x - out.mean);
    out.std_dev = std::sqrt(acc / static_cast<double>(xs.size() - 1));
  }
  return out;
}

// Structured text record with stable key names for machine diffing.
inline std::string to_record(const MetricsReport& r, const std::string& prefix = "") {
  std::ostringstream os;
  os.precision(10);
  os << std::fixed;
  os << prefix << "accuracy = " << r.accuracy << "\n";
  os << prefix << "macro_precision = " << r.macro_precision << "\n";
  os << prefix << "macro_recall = " << r.macro_recall << "\n";
  os << prefix << "macro_f1 = " << r.macro_f1 << "\n";
  os << prefix << "confusion =";
  for (int v : r.confusion) os << " " << v;
  os << "\n";
  return os.str();
}

}  // namespace mtp::metrics
