#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "mtp/autodiff.hpp"
#include "mtp/data.hpp"
#include "mtp/spectral.hpp"
#include "mtp/tensor.hpp"

// The MTP model: time-series, vision and text encoder branches operating in
// the frequency domain, hierarchical contrastive losses and the
// JS-divergence distribution-similarity fusion, assembled on the autodiff
// graph.
namespace mtp::model {

struct ModelConfig {
  int series_len = 24;    // l
  int channels = 1;       // C of the raw series
  int embed_dim = 32;     // m, semantic embedding width
  int fusion_dim = 128;   // d, shared feature width
  int depth = 2;          // L, frequency-MLP layers
  int taps = 9;           // s, filter taps
  int filters = 8;        // F, sub-bands
  int pool_width = 3;     // k, spectral pooling window
  double phi = 24.0;      // periodicity hyperparameter
  int image_size = 64;
  int conv1d_kernel = 3;
  int conv1d_channels = 4;  // C_mid of the image-generation stack
  int enc_channels1 = 4;    // image encoder conv widths
  int enc_channels2 = 8;
  int num_classes = 2;
  int vocab_size = 1;
  double tau = 0.07;
  double alpha = 0.1;
  double beta = 0.1;
  double gamma = 1.0;
  bool drop_vision = false;
  bool drop_text = false;
  bool drop_timeseries = false;

  int augmented_channels() const { return 2 * channels + 2; }

  // Row-major folding of the time axis into the pre-resize 2D map.
  int map_rows() const {
    int h = static_cast<int>(std::floor(std::sqrt(static_cast<double>(series_len))));
    return std::max(h, 1);
  }
  int map_cols() const { return (series_len + map_rows() - 1) / map_rows(); }

  int encoder_spatial(int input_side) const {
    const int s1 = (input_side - 3) / 2 + 1;
    const int s2 = (s1 - 3) / 2 + 1;
    require(s2 >= 1, "ModelConfig: image too small for the encoder stack");
    return s2;
  }

  int surviving_modalities() const {
    return (drop_timeseries ? 0 : 1) + (drop_vision ? 0 : 1) + (drop_text ? 0 : 1);
  }

  void validate() const {
    require(series_len >= 2 && channels >= 1, "ModelConfig: bad series shape");
    require(embed_dim >= 1 && fusion_dim >= 2 && depth >= 1, "ModelConfig: bad widths");
    require(taps >= 2 && filters >= 1 && pool_width >= 1, "ModelConfig: bad spectral config");
    require(fusion_dim >= taps, "ModelConfig: fusion_dim must be >= taps");
    require(phi > 0.0, "ModelConfig: phi must be positive");
    require(tau > 0.0, "ModelConfig: tau must be positive");
    require(alpha >= 0.0 && beta >= 0.0 && gamma >= 0.0, "ModelConfig: negative loss weight");
    require(num_classes >= 2 && vocab_size >= 1, "ModelConfig: bad head sizes");
    require(surviving_modalities() >= 1, "ModelConfig: at most two branches may be dropped");
  }
};

// Flat registry of every trainable tensor, addressed by hierarchical name.
// Optimizer moments live alongside the values so the training loop stays a
// single loop over entries.
struct ParamStore {
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor m1, m2;  // Adam moments
  };

  std::vector<Entry> entries;

  int add(const std::string& name, Tensor value) {
    Entry e;
    e.name = name;
    e.grad = Tensor(value.shape());
    e.m1 = Tensor(value.shape());
    e.m2 = Tensor(value.shape());
    e.value = std::move(value);
    entries.push_back(std::move(e));
    return static_cast<int>(entries.size()) - 1;
  }

  Entry& operator[](int i) { return entries[static_cast<std::size_t>(i)]; }
  const Entry& operator[](int i) const { return entries[static_cast<std::size_t>(i)]; }

  void zero_grad() {
    for (auto& e : entries) e.grad.fill(0.0);
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.value.numel();
    return n;
  }
};

// Periodicity encoding rows [sin(2*pi*t/phi), cos(2*pi*t/phi)].
inline Tensor periodicity_encode(int t_len, double phi) {
  require(t_len >= 1, "periodicity_encode: T must be >= 1");
  require(phi > 0.0, "periodicity_encode: phi must be positive");
  Tensor out({t_len, 2});
  for (int t = 0; t < t_len; ++t) {
    out.at(t, 0) = std::sin(2.0 * std::numbers::pi * t / phi);
    out.at(t, 1) = std::cos(2.0 * std::numbers::pi * t / phi);
  }
  return out;
}

// One instance as fed to the batch builder: normalized series plus token ids.
struct EncodedInstance {
  Tensor series;  // [l, C], normalized
  std::vector<int> token_ids;
  int label = data::kUnlabeled;
};

struct Model;

namespace detail {

inline Tensor dft_cos_matrix(int n) {
  Tensor m({n, n});
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i) m.at(k, i) = std::cos(2.0 * std::numbers::pi * k * i / n);
  return m;
}

inline Tensor dft_sin_matrix(int n) {
  Tensor m({n, n});
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i) m.at(k, i) = std::sin(2.0 * std::numbers::pi * k * i / n);
  return m;
}

// Pooling weights: row i averages bins [i, i+k-1] with edge replication.
inline Tensor pool_matrix(int n, int k) {
  Tensor m({n, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) m.at(i, std::min(i + j, n - 1)) += 1.0 / k;
  return m;
}

}  // namespace detail

struct Model {
  ModelConfig cfg;
  ParamStore params;

  // ts branch
  int psi = -1;
  std::vector<int> w_real, w_imag, b_real, b_imag;
  int out_proj = -1, out_bias = -1;
  // vision branch
  int conv1d_k = -1, conv1d_b = -1;
  int conv2a_k = -1, conv2a_b = -1;
  int conv2b_k = -1, conv2b_b = -1;
  int enc1_k = -1, enc1_b = -1, enc2_k = -1, enc2_b = -1;
  int enc_fc = -1, enc_fc_b = -1;
  // text branch
  int token_emb = -1;
  // fusion
  int gate_v = -1, gate_g = -1, gate_t = -1;
  int head_v_w = -1, head_v_b = -1, head_g_w = -1, head_g_b = -1, head_t_w = -1, head_t_b = -1;
  int cls_w1 = -1, cls_b1 = -1, cls_w2 = -1, cls_b2 = -1;

  spectral::FilterBank bank;  // shared by vision and text spectra

  static Model init(const ModelConfig& cfg, unsigned seed) {
    cfg.validate();
    Model mdl;
    mdl.cfg = cfg;
    std::mt19937 rng(seed);
    auto& p = mdl.params;
    const int m = cfg.embed_dim, d = cfg.fusion_dim, mc = cfg.num_classes;
    const double sm = 1.0 / std::sqrt(static_cast<double>(m));
    const double sd = 1.0 / std::sqrt(static_cast<double>(d));

    mdl.psi = p.add("ts.psi", Tensor::uniform({1, m}, sm, rng));
    for (int layer = 0; layer < cfg.depth; ++layer) {
      const std::string base = "ts.layer" + std::to_string(layer);
      mdl.w_real.push_back(p.add(base + ".w_real", Tensor::uniform({m, m}, sm, rng)));
      mdl.w_imag.push_back(p.add(base + ".w_imag", Tensor::uniform({m, m}, sm, rng)));
      mdl.b_real.push_back(p.add(base + ".b_real", Tensor::zeros({m})));
      mdl.b_imag.push_back(p.add(base + ".b_imag", Tensor::zeros({m})));
    }
    mdl.out_proj = p.add("ts.out_proj", Tensor::uniform({m, d}, sm, rng));
    mdl.out_bias = p.add("ts.out_bias", Tensor::zeros({d}));

    const int ca = cfg.augmented_channels(), cm = cfg.conv1d_channels;
    const int ch = std::max(cm / 2, 1);
    const double s1 = 1.0 / std::sqrt(static_cast<double>(cfg.conv1d_kernel * ca));
    mdl.conv1d_k = p.add("vision.conv1d.kernel",
                         Tensor::uniform({cfg.conv1d_kernel, ca, cm}, s1, rng));
    mdl.conv1d_b = p.add("vision.conv1d.bias", Tensor::zeros({cm}));
    mdl.conv2a_k = p.add("vision.conv2a.kernel",
                         Tensor::uniform({ch, cm * 9}, 1.0 / std::sqrt(9.0 * cm), rng));
    mdl.conv2a_b = p.add("vision.conv2a.bias", Tensor::zeros({ch}));
    mdl.conv2b_k = p.add("vision.conv2b.kernel",
                         Tensor::uniform({1, ch * 9}, 1.0 / std::sqrt(9.0 * ch), rng));
    mdl.conv2b_b = p.add("vision.conv2b.bias", Tensor::zeros({1}));

    const int e1 = cfg.enc_channels1, e2 = cfg.enc_channels2;
    mdl.enc1_k = p.add("vision.enc1.kernel", Tensor::uniform({e1, 9}, 1.0 / 3.0, rng));
    mdl.enc1_b = p.add("vision.enc1.bias", Tensor::zeros({e1}));
    mdl.enc2_k = p.add("vision.enc2.kernel", Tensor::uniform({e2, e1 * 9}, 1.0 / std::sqrt(9.0 * e1), rng));
    mdl.enc2_b = p.add("vision.enc2.bias", Tensor::zeros({e2}));
    const int side = cfg.encoder_spatial(cfg.image_size);
    const int flat = e2 * side * side;
    mdl.enc_fc = p.add("vision.enc_fc", Tensor::uniform({flat, d}, 1.0 / std::sqrt(static_cast<double>(flat)), rng));
    mdl.enc_fc_b = p.add("vision.enc_fc.bias", Tensor::zeros({d}));

    mdl.token_emb = p.add("text.token_emb", Tensor::uniform({cfg.vocab_size, d}, sd, rng));

    auto identity = [d]() {
      Tensor eye({d, d});
      for (int i = 0; i < d; ++i) eye.at(i, i) = 1.0;
      return eye;
    };
    mdl.gate_v = p.add("fusion.gate_v", identity());
    mdl.gate_g = p.add("fusion.gate_g", identity());
    mdl.gate_t = p.add("fusion.gate_t", identity());
    mdl.head_v_w = p.add("fusion.head_v.w", Tensor::uniform({d, mc}, sd, rng));
    mdl.head_v_b = p.add("fusion.head_v.b", Tensor::zeros({mc}));
    mdl.head_g_w = p.add("fusion.head_g.w", Tensor::uniform({d, mc}, sd, rng));
    mdl.head_g_b = p.add("fusion.head_g.b", Tensor::zeros({mc}));
    mdl.head_t_w = p.add("fusion.head_t.w", Tensor::uniform({d, mc}, sd, rng));
    mdl.head_t_b = p.add("fusion.head_t.b", Tensor::zeros({mc}));
    mdl.cls_w1 = p.add("cls.w1", Tensor::uniform({d, d}, sd, rng));
    mdl.cls_b1 = p.add("cls.b1", Tensor::zeros({d}));
    mdl.cls_w2 = p.add("cls.w2", Tensor::uniform({d, mc}, sd, rng));
    mdl.cls_b2 = p.add("cls.b2", Tensor::zeros({mc}));

    mdl.bank = spectral::build_filterbank(cfg.taps, cfg.filters, cfg.fusion_dim);
    return mdl;
  }
};

// Everything the training loop and the evaluator need from one batch pass.
struct BatchOutput {
  ad::Var x_v, x_g, x_t;       // [N, d] features (zeros for dropped branches)
  ad::Var p_v, p_g, p_t;       // [N, m] posteriors (invalid Var when dropped)
  ad::Var delta;               // [N, 1]
  ad::Var fused;               // [N, d]
  ad::Var probs;               // [N, m] classifier output
  ad::Var loss_sup, loss_uns, loss_ce, loss_total;  // scalars
};

namespace detail {

struct SharedConsts {
  ad::Var cos_l, sin_l;   // [l, l]
  ad::Var cos_d, sin_d;   // [d, d]
  ad::Var pool_d;         // [d, d] pooling rows
  ad::Var resp_over_c;    // [1, d] summed filterbank response / c
  ad::Var period;         // [l, 2]
  ad::Var ones_row_d;     // [1, d]
};

inline SharedConsts make_consts(ad::Graph& g, const Model& mdl) {
  const auto& cfg = mdl.cfg;
  SharedConsts c;
  c.cos_l = g.input(dft_cos_matrix(cfg.series_len));
  c.sin_l = g.input(dft_sin_matrix(cfg.series_len));
  c.cos_d = g.input(dft_cos_matrix(cfg.fusion_dim));
  c.sin_d = g.input(dft_sin_matrix(cfg.fusion_dim));
  c.pool_d = g.input(pool_matrix(cfg.fusion_dim, cfg.pool_width));
  const auto resp = spectral::summed_response(mdl.bank);
  Tensor r({1, cfg.fusion_dim});
  for (int i = 0; i < cfg.fusion_dim; ++i)
    r.at(0, i) = resp[static_cast<std::size_t>(i)] / cfg.fusion_dim;
  c.resp_over_c = g.input(std::move(r));
  c.period = g.input(periodicity_encode(cfg.series_len, cfg.phi));
  c.ones_row_d = g.input(Tensor::full({1, cfg.fusion_dim}, 1.0));
  return c;
}

// Spectral tail shared by the vision and text branches: DFT, filterbank
// compression, pooled variant.
struct SpectralPair {
  ad::Var spe;     // [1, d]
  ad::Var pooled;  // [1, d]
};

inline SpectralPair spectral_tail(ad::Graph& g, ad::Var feat, const SharedConsts& c) {
  ad::Var re = g.matmul(feat, c.cos_d);                 // cos matrix is symmetric
  ad::Var im = g.scale(g.matmul(feat, c.sin_d), -1.0);
  ad::Var power = g.add(g.mul(re, re), g.mul(im, im));
  ad::Var spe = g.mul(power, c.resp_over_c);
  ad::Var pooled = g.matmul_nt(spe, c.pool_d);
  return {spe, pooled};
}

// Real part of the inverse DFT of a zero-phase (real) spectrum.
inline ad::Var ifft_real(ad::Graph& g, ad::Var spe, ad::Var cos_mat, int n) {
  return g.scale(g.matmul(spe, cos_mat), 1.0 / n);
}

}  // namespace detail

// Row-wise base-2 JS divergence between two [N, m] posterior matrices.
inline ad::Var js_rows(ad::Graph& g, ad::Var p, ad::Var q) {
  const double inv_ln2 = 1.0 / std::numbers::ln2;
  ad::Var mid = g.scale(g.add(p, q), 0.5);
  ad::Var log_mid = g.log_guard(mid);
  ad::Var kl_p = g.row_sums(g.mul(p, g.sub(g.log_guard(p), log_mid)));
  ad::Var kl_q = g.row_sums(g.mul(q, g.sub(g.log_guard(q), log_mid)));
  return g.scale(g.add(kl_p, kl_q), 0.5 * inv_ln2);
}

// Class-conditional pairwise contrastive loss summed over modalities.
// Anchor x', positive s (same class), negatives the rest of the batch;
// cosine similarities over temperature tau. Singleton classes contribute
// nothing.
inline ad::Var supervised_contrastive_loss(ad::Graph& g,
                                           const std::vector<ad::Var>& modality_features,
                                           const std::vector<int>& labels, double tau) {
  const int n = static_cast<int>(labels.size());
  if (n < 2) {
    std::cerr << "supervised_contrastive_loss: batch of " << n << ", loss is zero\n";
    return g.input(Tensor::zeros({1}));
  }
  std::vector<int> class_size(
      static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end())) + 1, 0);
  for (int l : labels) ++class_size[static_cast<std::size_t>(l)];

  // Pair weights 1/|M_c| for same-class i != j; row weights collect the
  // log-denominator multiplicity per anchor.
  Tensor pair_w({n, n});
  Tensor row_w({n, 1});
  Tensor offdiag({n, n});
  bool any_pair = false;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i != j) offdiag.at(i, j) = 1.0;
      if (i != j && labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)]) {
        const double w = 1.0 / class_size[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
        pair_w.at(i, j) = w;
        row_w.at(i, 0) += w;
        any_pair = true;
      }
    }
  if (!any_pair) return g.input(Tensor::zeros({1}));

  ad::Var pair_w_v = g.input(pair_w);
  ad::Var row_w_v = g.input(row_w);
  ad::Var offdiag_v = g.input(offdiag);

  ad::Var total = g.input(Tensor::zeros({1}));
  for (ad::Var x : modality_features) {
    ad::Var z = g.rows_l2_normalize(x);
    ad::Var sims = g.scale(g.matmul_nt(z, z), 1.0 / tau);
    ad::Var denom = g.row_sums(g.mul(g.exp(sims), offdiag_v));  // [N, 1]
    ad::Var t1 = g.scale(g.sum_all(g.mul(sims, pair_w_v)), -1.0);
    ad::Var t2 = g.sum_all(g.mul(g.log_guard(denom), row_w_v));
    total = g.add(total, g.add(t1, t2));
  }
  return total;
}

// InfoNCE over same-instance cross-modal positives (positive term = mean
// over the other modalities) with in-batch negatives drawn from the anchor's
// own modality.
inline ad::Var infonce_loss(ad::Graph& g, const std::vector<ad::Var>& modality_features,
                            double tau) {
  const int k = static_cast<int>(modality_features.size());
  if (k < 2) return g.input(Tensor::zeros({1}));
  const int n = g.value(modality_features[0]).dim(0);
  Tensor diag({n, n}), offdiag({n, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) (i == j ? diag : offdiag).at(i, j) = 1.0;
  ad::Var diag_v = g.input(diag);
  ad::Var offdiag_v = g.input(offdiag);

  std::vector<ad::Var> z;
  for (ad::Var x : modality_features) z.push_back(g.rows_l2_normalize(x));

  ad::Var total = g.input(Tensor::zeros({1}));
  for (int a = 0; a < k; ++a) {
    std::vector<ad::Var> pos_terms;
    for (int b = 0; b < k; ++b) {
      if (b == a) continue;
      ad::Var sims = g.scale(
          g.matmul_nt(z[static_cast<std::size_t>(a)], z[static_cast<std::size_t>(b)]), 1.0 / tau);
      pos_terms.push_back(g.row_sums(g.mul(g.exp(sims), diag_v)));
    }
    ad::Var pos = pos_terms[0];
    for (std::size_t i = 1; i < pos_terms.size(); ++i) pos = g.add(pos, pos_terms[i]);
    pos = g.scale(pos, 1.0 / static_cast<double>(pos_terms.size()));
    ad::Var self_sims = g.scale(
        g.matmul_nt(z[static_cast<std::size_t>(a)], z[static_cast<std::size_t>(a)]), 1.0 / tau);
    ad::Var neg = g.row_sums(g.mul(g.exp(self_sims), offdiag_v));
    ad::Var per_anchor = g.sub(g.log_guard(g.add(pos, neg)), g.log_guard(pos));
    total = g.add(total, g.sum_all(per_anchor));
  }
  return g.scale(total, 1.0 / (static_cast<double>(k) * n));
}

// Mean one-hot cross entropy over the batch; log clamped at 1e-12.
inline ad::Var cross_entropy_loss(ad::Graph& g, ad::Var probs, const std::vector<int>& labels) {
  const int n = g.value(probs).dim(0), m = g.value(probs).dim(1);
  require(static_cast<int>(labels.size()) == n, "cross_entropy_loss: label count mismatch");
  Tensor onehot({n, m});
  for (int i = 0; i < n; ++i) {
    require(labels[static_cast<std::size_t>(i)] >= 0 && labels[static_cast<std::size_t>(i)] < m,
            "cross_entropy_loss: label out of range");
    onehot.at(i, labels[static_cast<std::size_t>(i)]) = 1.0;
  }
  return g.scale(g.sum_all(g.mul(g.log_guard(probs), g.input(onehot))), -1.0 / n);
}

// Builds the full forward pass for one batch on the given graph. Parameter
// Vars are created once and reported back through `param_vars` so gradients
// can be harvested after backward.
class BatchBuilder {
public:
  BatchBuilder(ad::Graph& g, Model& mdl) : g_(g), mdl_(mdl) {
    param_vars_.resize(mdl.params.entries.size(), ad::Var{});
  }

  ad::Var param(int idx) {
    auto& v = param_vars_[static_cast<std::size_t>(idx)];
    if (!v.valid()) v = g_.input(mdl_.params[idx].value);
    return v;
  }

  // Accumulates graph gradients back into the parameter store.
  void harvest_grads() {
    for (std::size_t i = 0; i < param_vars_.size(); ++i) {
      if (!param_vars_[i].valid()) continue;
      const Tensor& gr = g_.grad(param_vars_[i]);
      Tensor& dst = mdl_.params[static_cast<int>(i)].grad;
      for (std::size_t j = 0; j < gr.numel(); ++j) dst[j] += gr[j];
    }
  }

  // -- time series branch (Figure 1a): embed, DFT, complex MLPs, inverse
  //    DFT, mean over time, linear projection.
  ad::Var encode_timeseries(const Tensor& series, const detail::SharedConsts& c) {
    const auto& cfg = mdl_.cfg;
    // Multivariate input collapses to its channel mean for this branch.
    Tensor x_col({cfg.series_len, 1});
    for (int i = 0; i < cfg.series_len; ++i) {
      double acc = 0.0;
      for (int ch = 0; ch < cfg.channels; ++ch) acc += series.at(i, ch);
      x_col.at(i, 0) = acc / cfg.channels;
    }
    ad::Var d_emb = g_.matmul(g_.input(std::move(x_col)), param(mdl_.psi));  // [l, m]
    ad::Var re = g_.matmul(c.cos_l, d_emb);
    ad::Var im = g_.scale(g_.matmul(c.sin_l, d_emb), -1.0);
    for (int layer = 0; layer < cfg.depth; ++layer) {
      ad::Var wr = param(mdl_.w_real[static_cast<std::size_t>(layer)]);
      ad::Var wi = param(mdl_.w_imag[static_cast<std::size_t>(layer)]);
      ad::Var br = param(mdl_.b_real[static_cast<std::size_t>(layer)]);
      ad::Var bi = param(mdl_.b_imag[static_cast<std::size_t>(layer)]);
      ad::Var new_re = g_.relu(g_.add_rowvec(g_.sub(g_.matmul(re, wr), g_.matmul(im, wi)), br));
      ad::Var new_im = g_.relu(g_.add_rowvec(g_.add(g_.matmul(re, wi), g_.matmul(im, wr)), bi));
      re = new_re;
      im = new_im;
    }
    // Inverse DFT (real part), mean over time, projection to d.
    ad::Var spatial = g_.scale(g_.sub(g_.matmul(c.cos_l, re), g_.matmul(c.sin_l, im)),
                               1.0 / cfg.series_len);
    ad::Var pooled = g_.mean_rows(spatial);  // [1, m]
    return g_.add_rowvec(g_.matmul(pooled, param(mdl_.out_proj)), param(mdl_.out_bias));
  }

  // -- vision branch, stage 1 (Figure 1b): series -> augmented input ->
  //    generated image -> encoder feature -> compressed/pooled spectrum.
  detail::SpectralPair encode_image_spectrum(const Tensor& series, const detail::SharedConsts& c) {
    ad::Var img = generate_image(series, c);
    ad::Var feat = encode_image(img);
    return detail::spectral_tail(g_, feat, c);
  }

  ad::Var generate_image(const Tensor& series, const detail::SharedConsts& c) {
    const auto& cfg = mdl_.cfg;
    ad::Var x = g_.input(series);  // [l, C]
    // Frequency channels: per-channel DFT magnitude.
    ad::Var re = g_.matmul(c.cos_l, x);
    ad::Var im = g_.scale(g_.matmul(c.sin_l, x), -1.0);
    ad::Var mag = g_.sqrt_guard(g_.add(g_.mul(re, re), g_.mul(im, im)));
    ad::Var aug = g_.concat_cols({x, mag, c.period});  // [l, 2C+2]

    ad::Var h1 = g_.relu(g_.conv1d_same(aug, param(mdl_.conv1d_k), param(mdl_.conv1d_b)));
    // Row-major fold of the time axis into a 2D map, zero-padded.
    const int rows = cfg.map_rows(), cols = cfg.map_cols();
    const int pad = rows * cols - cfg.series_len;
    ad::Var grid = h1;
    if (pad > 0)
      grid = g_.concat_rows({h1, g_.input(Tensor::zeros({pad, cfg.conv1d_channels}))});
    ad::Var map3 = g_.reshape(g_.transpose(grid), {cfg.conv1d_channels, rows, cols});

    ad::Var h2 = g_.relu(g_.conv2d(map3, param(mdl_.conv2a_k), param(mdl_.conv2a_b), 3, 3, 1, true));
    ad::Var h3 = g_.conv2d(h2, param(mdl_.conv2b_k), param(mdl_.conv2b_b), 3, 3, 1, true);
    ad::Var resized = g_.bilinear_resize(h3, cfg.image_size, cfg.image_size);
    return g_.standardize_all(resized);  // [1, S, S]
  }

  ad::Var encode_image(ad::Var img) {
    const auto& cfg = mdl_.cfg;
    ad::Var e1 = g_.relu(g_.conv2d(img, param(mdl_.enc1_k), param(mdl_.enc1_b), 3, 3, 2, false));
    ad::Var e2 = g_.relu(g_.conv2d(e1, param(mdl_.enc2_k), param(mdl_.enc2_b), 3, 3, 2, false));
    const int side = cfg.encoder_spatial(cfg.image_size);
    ad::Var flat = g_.reshape(e2, {1, cfg.enc_channels2 * side * side});
    return g_.add_rowvec(g_.matmul(flat, param(mdl_.enc_fc)), param(mdl_.enc_fc_b));  // [1, d]
  }

  // -- text branch, stage 1 (Figure 1c): bag-of-embeddings mean pooling,
  //    then the shared spectral tail.
  detail::SpectralPair encode_text_spectrum(const std::vector<int>& token_ids,
                                            const detail::SharedConsts& c) {
    ad::Var feat = g_.embedding_mean(param(mdl_.token_emb), token_ids);
    return detail::spectral_tail(g_, feat, c);
  }

  // Cross-modal enhancement: each compressed spectrum is gated by the other
  // modality's pooled spectrum and inverted back to the spatial domain. A
  // dropped partner contributes the multiplicative identity.
  ad::Var cross_enhance_image(detail::SpectralPair vis, ad::Var pooled_text_or_ones,
                              const detail::SharedConsts& c) {
    return detail::ifft_real(g_, g_.mul(vis.spe, pooled_text_or_ones), c.cos_d, mdl_.cfg.fusion_dim);
  }

  ad::Var cross_enhance_text(detail::SpectralPair txt, ad::Var pooled_vis_or_ones,
                             const detail::SharedConsts& c) {
    return detail::ifft_real(g_, g_.mul(txt.spe, pooled_vis_or_ones), c.cos_d, mdl_.cfg.fusion_dim);
  }

  // Full batch pass: branch features, posteriors, fusion and, in training
  // mode, all losses (which require labels).
  BatchOutput forward(const std::vector<EncodedInstance>& batch, bool with_losses = true) {
    const auto& cfg = mdl_.cfg;
    require(!batch.empty(), "forward: empty batch");
    const int n = static_cast<int>(batch.size());
    const auto c = detail::make_consts(g_, mdl_);

    std::vector<ad::Var> vs, gs, ts;
    for (const auto& inst : batch) {
      require(inst.series.dim(0) == cfg.series_len && inst.series.dim(1) == cfg.channels,
              "forward: instance shape mismatch");
      detail::SpectralPair vis{}, txt{};
      if (!cfg.drop_vision) vis = encode_image_spectrum(inst.series, c);
      if (!cfg.drop_text) txt = encode_text_spectrum(inst.token_ids, c);

      if (!cfg.drop_timeseries) vs.push_back(encode_timeseries(inst.series, c));
      if (!cfg.drop_vision)
        gs.push_back(cross_enhance_image(vis, cfg.drop_text ? c.ones_row_d : txt.pooled, c));
      if (!cfg.drop_text)
        ts.push_back(cross_enhance_text(txt, cfg.drop_vision ? c.ones_row_d : vis.pooled, c));
    }

    BatchOutput out;
    ad::Var zeros_nd = g_.input(Tensor::zeros({n, cfg.fusion_dim}));
    out.x_v = cfg.drop_timeseries ? zeros_nd : g_.concat_rows(vs);
    out.x_g = cfg.drop_vision ? zeros_nd : g_.concat_rows(gs);
    out.x_t = cfg.drop_text ? zeros_nd : g_.concat_rows(ts);

    // Per-modality posteriors.
    auto posterior = [&](ad::Var x, int w_idx, int b_idx) {
      return g_.softmax_rows(g_.add_rowvec(g_.matmul(x, param(w_idx)), param(b_idx)));
    };
    if (!cfg.drop_timeseries) out.p_v = posterior(out.x_v, mdl_.head_v_w, mdl_.head_v_b);
    if (!cfg.drop_vision) out.p_g = posterior(out.x_g, mdl_.head_g_w, mdl_.head_g_b);
    if (!cfg.drop_text) out.p_t = posterior(out.x_t, mdl_.head_t_w, mdl_.head_t_b);

    // Distribution-similarity weight, mean pairwise JS over surviving pairs.
    std::vector<ad::Var> surv_p;
    if (out.p_v.valid()) surv_p.push_back(out.p_v);
    if (out.p_g.valid()) surv_p.push_back(out.p_g);
    if (out.p_t.valid()) surv_p.push_back(out.p_t);
    if (surv_p.size() >= 2) {
      std::vector<ad::Var> js_terms;
      for (std::size_t i = 0; i < surv_p.size(); ++i)
        for (std::size_t j = i + 1; j < surv_p.size(); ++j)
          js_terms.push_back(js_rows(g_, surv_p[i], surv_p[j]));
      ad::Var acc = js_terms[0];
      for (std::size_t i = 1; i < js_terms.size(); ++i) acc = g_.add(acc, js_terms[i]);
      out.delta = g_.scale(acc, 1.0 / static_cast<double>(js_terms.size()));
    } else {
      out.delta = g_.input(Tensor::zeros({n, 1}));
    }

    // Fused features: (1-D)(Kv xv + Kg xg + Kt xt) + D xv + D xg + D xt,
    // restricted to surviving modalities.
    std::vector<ad::Var> gated, plain;
    if (!cfg.drop_timeseries) {
      gated.push_back(g_.matmul(out.x_v, param(mdl_.gate_v)));
      plain.push_back(out.x_v);
    }
    if (!cfg.drop_vision) {
      gated.push_back(g_.matmul(out.x_g, param(mdl_.gate_g)));
      plain.push_back(out.x_g);
    }
    if (!cfg.drop_text) {
      gated.push_back(g_.matmul(out.x_t, param(mdl_.gate_t)));
      plain.push_back(out.x_t);
    }
    ad::Var gate_sum = gated[0];
    for (std::size_t i = 1; i < gated.size(); ++i) gate_sum = g_.add(gate_sum, gated[i]);
    ad::Var plain_sum = plain[0];
    for (std::size_t i = 1; i < plain.size(); ++i) plain_sum = g_.add(plain_sum, plain[i]);
    ad::Var one_minus_delta = g_.add_const(g_.scale(out.delta, -1.0), 1.0);
    out.fused = g_.add(g_.mul_rowscalar(gate_sum, one_minus_delta),
                       g_.mul_rowscalar(plain_sum, out.delta));

    // Classifier.
    ad::Var hidden = g_.relu(g_.add_rowvec(g_.matmul(out.fused, param(mdl_.cls_w1)), param(mdl_.cls_b1)));
    ad::Var logits = g_.add_rowvec(g_.matmul(hidden, param(mdl_.cls_w2)), param(mdl_.cls_b2));
    out.probs = g_.softmax_rows(logits);

    if (!with_losses) return out;

    // Losses.
    std::vector<int> labels;
    bool all_labeled = true;
    for (const auto& inst : batch) {
      labels.push_back(inst.label);
      if (inst.label == data::kUnlabeled) all_labeled = false;
    }
    require(all_labeled, "forward: training requires labeled instances");

    std::vector<ad::Var> surv_x;
    if (!cfg.drop_timeseries) surv_x.push_back(out.x_v);
    if (!cfg.drop_vision) surv_x.push_back(out.x_g);
    if (!cfg.drop_text) surv_x.push_back(out.x_t);

    out.loss_sup = supervised_contrastive_loss(g_, surv_x, labels, cfg.tau);
    out.loss_uns = infonce_loss(g_, surv_x, cfg.tau);
    out.loss_ce = cross_entropy_loss(g_, out.probs, labels);
    out.loss_total = g_.add(g_.add(g_.scale(out.loss_sup, cfg.alpha), g_.scale(out.loss_uns, cfg.beta)),
                            g_.scale(out.loss_ce, cfg.gamma));
    return out;
  }

private:
  ad::Graph& g_;
  Model& mdl_;
  std::vector<ad::Var> param_vars_;
};

}  // namespace mtp::model
