#pragma once

#include <vector>

#include "mtp/model.hpp"
#include "mtp/spectral.hpp"

// Standalone fusion operations over plain tensors. These run the same graph
// code the training loop uses; the graph is just built and evaluated forward.
namespace mtp::fusion {

struct ModalityFeatures {
  std::vector<double> x_v, x_g, x_t;

  void validate() const {
    require(x_v.size() == x_g.size() && x_g.size() == x_t.size(),
            "ModalityFeatures: length mismatch");
    for (const auto* v : {&x_v, &x_g, &x_t})
      for (double x : *v) require(std::isfinite(x), "ModalityFeatures: non-finite entry");
  }
};

struct PosteriorTriple {
  spectral::ProbabilityVector p_v, p_g, p_t;
};

// Per-modality gates, posterior heads and loss weights for the standalone
// fusion path. Inside the full model these live in the parameter store.
struct FusionParams {
  Tensor gate_v, gate_g, gate_t;      // [d, d]
  Tensor head_v, head_g, head_t;      // [d, m]
  std::vector<double> head_v_bias, head_g_bias, head_t_bias;
  double alpha = 0.1, beta = 0.1, gamma = 1.0;
  double tau = 0.07;
};

inline double supervised_contrastive_loss(const Tensor& x_v, const Tensor& x_g, const Tensor& x_t,
                                          const std::vector<int>& labels, double tau) {
  require(x_v.rank() == 2 && x_v.same_shape(x_g) && x_g.same_shape(x_t),
          "supervised_contrastive_loss: feature shape mismatch");
  require(static_cast<int>(labels.size()) == x_v.dim(0),
          "supervised_contrastive_loss: label count mismatch");
  require(tau > 0.0, "supervised_contrastive_loss: tau must be positive");
  ad::Graph g;
  std::vector<ad::Var> mods{g.input(x_v), g.input(x_g), g.input(x_t)};
  return g.scalar(model::supervised_contrastive_loss(g, mods, labels, tau));
}

inline double infonce_loss(const Tensor& x_v, const Tensor& x_g, const Tensor& x_t, double tau) {
  require(x_v.rank() == 2 && x_v.same_shape(x_g) && x_g.same_shape(x_t),
          "infonce_loss: feature shape mismatch");
  require(tau > 0.0, "infonce_loss: tau must be positive");
  ad::Graph g;
  std::vector<ad::Var> mods{g.input(x_v), g.input(x_g), g.input(x_t)};
  return g.scalar(model::infonce_loss(g, mods, tau));
}

inline double cross_entropy_loss(const std::vector<spectral::ProbabilityVector>& probs,
                                 const std::vector<int>& labels) {
  require(!probs.empty() && probs.size() == labels.size(), "cross_entropy_loss: batch mismatch");
  const int n = static_cast<int>(probs.size());
  const int m = static_cast<int>(probs[0].probs.size());
  Tensor p({n, m});
  for (int i = 0; i < n; ++i) {
    probs[static_cast<std::size_t>(i)].validate();
    require(static_cast<int>(probs[static_cast<std::size_t>(i)].probs.size()) == m,
            "cross_entropy_loss: ragged probability vectors");
    for (int j = 0; j < m; ++j) p.at(i, j) = probs[static_cast<std::size_t>(i)].probs[static_cast<std::size_t>(j)];
  }
  ad::Graph g;
  return g.scalar(model::cross_entropy_loss(g, g.input(p), labels));
}

inline double total_loss(double sup, double uns, double ce, double alpha, double beta,
                         double gamma) {
  require(alpha >= 0.0 && beta >= 0.0 && gamma >= 0.0, "total_loss: negative weight");
  return alpha * sup + beta * uns + gamma * ce;
}

namespace detail {

inline spectral::ProbabilityVector head_softmax(const std::vector<double>& x, const Tensor& w,
                                                const std::vector<double>& bias) {
  const int d = w.dim(0), m = w.dim(1);
  require(static_cast<int>(x.size()) == d, "modality_posteriors: feature length mismatch");
  std::vector<double> logits(static_cast<std::size_t>(m), 0.0);
  for (int j = 0; j < m; ++j) {
    double acc = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(j)];
    for (int i = 0; i < d; ++i) acc += x[static_cast<std::size_t>(i)] * w.at(i, j);
    logits[static_cast<std::size_t>(j)] = acc;
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double& v : logits) {
    v = std::exp(v - mx);
    z += v;
  }
  spectral::ProbabilityVector p;
  for (double v : logits) p.probs.push_back(v / z);
  return p;
}

}  // namespace detail

inline PosteriorTriple modality_posteriors(const ModalityFeatures& f, const FusionParams& params) {
  f.validate();
  return {detail::head_softmax(f.x_v, params.head_v, params.head_v_bias),
          detail::head_softmax(f.x_g, params.head_g, params.head_g_bias),
          detail::head_softmax(f.x_t, params.head_t, params.head_t_bias)};
}

// x_hat = (1-D)(Kv xv + Kg xg + Kt xt) + D xv + D xg + D xt, with D the mean
// pairwise JS divergence of the posteriors.
inline std::vector<double> fuse_features(const ModalityFeatures& f, const PosteriorTriple& post,
                                         const FusionParams& params) {
  f.validate();
  const double delta = spectral::js_delta(post.p_v, post.p_g, post.p_t);
  const int d = static_cast<int>(f.x_v.size());
  std::vector<double> out(static_cast<std::size_t>(d), 0.0);
  auto gate_apply = [d](const Tensor& k, const std::vector<double>& x, std::vector<double>& acc) {
    for (int i = 0; i < d; ++i) {
      double s = 0.0;
      for (int j = 0; j < d; ++j) s += x[static_cast<std::size_t>(j)] * k.at(j, i);
      acc[static_cast<std::size_t>(i)] += s;
    }
  };
  std::vector<double> gated(static_cast<std::size_t>(d), 0.0);
  gate_apply(params.gate_v, f.x_v, gated);
  gate_apply(params.gate_g, f.x_g, gated);
  gate_apply(params.gate_t, f.x_t, gated);
  for (int i = 0; i < d; ++i)
    out[static_cast<std::size_t>(i)] =
        (1.0 - delta) * gated[static_cast<std::size_t>(i)] +
        delta * (f.x_v[static_cast<std::size_t>(i)] + f.x_g[static_cast<std::size_t>(i)] +
                 f.x_t[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace mtp::fusion
