#pragma once

// Synthetic two-class series generators shared by the training-level tests:
// class 0 is a slow oscillation, class 1 a fast one, with configurable
// amplitude separation, trend correlation and noise.
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mtp/model.hpp"

namespace testutil {

struct WaveSpec {
  int length = 24;
  double slow_cycles = 1.0;
  double fast_cycles = 6.0;
  double amp0 = 0.6;
  double amp1 = 1.4;
  double base = 50.0;
  double noise = 0.25;
  double trend = 0.0;          // per-step slope magnitude; sign follows the class
  double trend_fidelity = 1.0; // probability the trend sign matches the class
};

inline std::vector<double> make_wave(int cls, const WaveSpec& spec, std::mt19937& rng) {
  std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> noise_dist(0.0, spec.noise);
  std::bernoulli_distribution keep_trend(spec.trend_fidelity);
  const double cycles = cls == 0 ? spec.slow_cycles : spec.fast_cycles;
  const double amp = cls == 0 ? spec.amp0 : spec.amp1;
  const double phase = phase_dist(rng);
  double slope = (cls == 0 ? -spec.trend : spec.trend);
  if (!keep_trend(rng)) slope = -slope;
  std::vector<double> v(static_cast<std::size_t>(spec.length));
  for (int t = 0; t < spec.length; ++t)
    v[static_cast<std::size_t>(t)] = spec.base + slope * t + noise_dist(rng) +
                                     amp * std::sin(2.0 * std::numbers::pi * cycles * t / spec.length + phase);
  return v;
}

inline void write_ucr_file(const std::string& path, int per_class, const WaveSpec& spec,
                           unsigned seed) {
  std::mt19937 rng(seed);
  std::ofstream out(path);
  out << "@problemName synthetic\n@classLabel true a b\n@data\n";
  // Interleave classes so batches stay mixed.
  for (int i = 0; i < per_class; ++i)
    for (int cls = 0; cls < 2; ++cls) {
      auto v = make_wave(cls, spec, rng);
      std::ostringstream line;
      line.precision(9);
      for (std::size_t j = 0; j < v.size(); ++j) {
        if (j) line << ",";
        line << v[j];
      }
      line << ":" << (cls == 0 ? "a" : "b");
      out << line.str() << "\n";
    }
}

// Directly encoded toy instances for unit-level training tests (bypasses the
// text pipeline with fixed token ids).
inline std::vector<mtp::model::EncodedInstance> encoded_waves(int per_class, const WaveSpec& spec,
                                                              unsigned seed, int vocab_size) {
  std::mt19937 rng(seed);
  std::vector<mtp::model::EncodedInstance> out;
  for (int i = 0; i < per_class; ++i)
    for (int cls = 0; cls < 2; ++cls) {
      auto v = make_wave(cls, spec, rng);
      mtp::model::EncodedInstance e;
      e.series = mtp::Tensor({spec.length, 1});
      for (int t = 0; t < spec.length; ++t) e.series.at(t, 0) = (v[static_cast<std::size_t>(t)] - spec.base);
      e.token_ids = {1 % vocab_size, (2 + cls) % vocab_size, 1 % vocab_size};
      e.label = cls;
      out.push_back(std::move(e));
    }
  return out;
}

}  // namespace testutil
