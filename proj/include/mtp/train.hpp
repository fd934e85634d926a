#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <random>
#include <sstream>
#include <vector>

#include "mtp/metrics.hpp"
#include "mtp/model.hpp"

// Mini-batch training loop: Adam moments with decoupled weight decay and a
// linear warmup over the first tenth of the steps. Deterministic under a
// fixed seed (single-threaded, seeded shuffles only).
namespace mtp::train {

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 0.01;
  int epochs = 50;
  int batch_size = 64;
  unsigned seed = 0;
  bool verbose = false;
};

struct EpochRecord {
  double sup = 0.0, uns = 0.0, ce = 0.0, total = 0.0;  // mean over batches
  double val_accuracy = 0.0, val_macro_f1 = 0.0;
};

using History = std::vector<EpochRecord>;

// Argmax class predictions, batched through the evaluation-mode forward.
inline std::vector<int> predict(model::Model& mdl, const std::vector<model::EncodedInstance>& data,
                                int batch_size = 64) {
  std::vector<int> preds;
  for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(data.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<model::EncodedInstance> batch(data.begin() + static_cast<std::ptrdiff_t>(start),
                                              data.begin() + static_cast<std::ptrdiff_t>(end));
    ad::Graph g;
    model::BatchBuilder builder(g, mdl);
    auto out = builder.forward(batch, /*with_losses=*/false);
    const Tensor& probs = g.value(out.probs);
    for (int i = 0; i < probs.dim(0); ++i) {
      int best = 0;
      for (int j = 1; j < probs.dim(1); ++j)
        if (probs.at(i, j) > probs.at(i, best)) best = j;
      preds.push_back(best);
    }
  }
  return preds;
}

inline metrics::MetricsReport evaluate(model::Model& mdl,
                                       const std::vector<model::EncodedInstance>& data) {
  require(!data.empty(), "evaluate: empty dataset");
  std::vector<int> truth;
  for (const auto& inst : data) {
    require(inst.label != data::kUnlabeled, "evaluate: unlabeled instance");
    truth.push_back(inst.label);
  }
  return metrics::compute_metrics(truth, predict(mdl, data), mdl.cfg.num_classes);
}

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline History train_epochs(model::Model& mdl, const std::vector<model::EncodedInstance>& train_set,
                            const std::vector<model::EncodedInstance>& val_set,
                            const TrainConfig& cfg) {
  require(!train_set.empty(), "train_epochs: empty train set");
  require(cfg.epochs >= 1 && cfg.batch_size >= 1, "train_epochs: bad schedule");
  require(cfg.lr > 0.0 && cfg.weight_decay >= 0.0, "train_epochs: bad optimizer config");

  const int n = static_cast<int>(train_set.size());
  const int batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const long total_steps = static_cast<long>(batches_per_epoch) * cfg.epochs;
  const long warmup_steps = std::max(1L, (total_steps + 9) / 10);

  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  long step = 0;
  std::mt19937 rng(cfg.seed);
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

  History history;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord rec;
    for (int b = 0; b < batches_per_epoch; ++b) {
      std::vector<model::EncodedInstance> batch;
      for (int i = b * cfg.batch_size; i < std::min(n, (b + 1) * cfg.batch_size); ++i)
        batch.push_back(train_set[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);

      ad::Graph g;
      model::BatchBuilder builder(g, mdl);
      auto out = builder.forward(batch);
      const double sup = g.scalar(out.loss_sup), uns = g.scalar(out.loss_uns),
                   ce = g.scalar(out.loss_ce), total = g.scalar(out.loss_total);
      if (!std::isfinite(total)) {
        std::ostringstream os;
        os << "train_epochs: non-finite loss at epoch " << epoch << " batch " << b
           << " (sup=" << sup << " uns=" << uns << " ce=" << ce << ")";
        std::cerr << os.str() << "\n";
        for (const auto& e : mdl.params.entries)
          if (!e.value.all_finite()) std::cerr << "  non-finite parameter: " << e.name << "\n";
        throw DivergenceError(os.str());
      }
      rec.sup += sup / batches_per_epoch;
      rec.uns += uns / batches_per_epoch;
      rec.ce += ce / batches_per_epoch;
      rec.total += total / batches_per_epoch;

      mdl.params.zero_grad();
      g.backward(out.loss_total);
      builder.harvest_grads();

      ++step;
      const double warm = std::min(1.0, static_cast<double>(step) / static_cast<double>(warmup_steps));
      const double lr_t = cfg.lr * warm;
      const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      for (auto& e : mdl.params.entries) {
        for (std::size_t i = 0; i < e.value.numel(); ++i) {
          const double grad = e.grad[i];
          e.m1[i] = kBeta1 * e.m1[i] + (1.0 - kBeta1) * grad;
          e.m2[i] = kBeta2 * e.m2[i] + (1.0 - kBeta2) * grad * grad;
          const double mhat = e.m1[i] / bc1;
          const double vhat = e.m2[i] / bc2;
          e.value[i] -= lr_t * (mhat / (std::sqrt(vhat) + kEps) + cfg.weight_decay * e.value[i]);
        }
      }
    }
    if (!val_set.empty()) {
      const auto val = evaluate(mdl, val_set);
      rec.val_accuracy = val.accuracy;
      rec.val_macro_f1 = val.macro_f1;
    }
    if (cfg.verbose)
      std::cerr << "epoch " << epoch << " total " << rec.total << " ce " << rec.ce << " val_acc "
                << rec.val_accuracy << "\n";
    history.push_back(rec);
  }
  return history;
}

}  // namespace mtp::train
