#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "mtp/fusion.hpp"

using namespace mtp;
using namespace mtp::fusion;

namespace {

Tensor random_features(int n, int d, std::mt19937& rng) {
  return Tensor::uniform({n, d}, 1.0, rng);
}

FusionParams identity_params(int d, int m, std::mt19937& rng) {
  FusionParams p;
  auto eye = [d] {
    Tensor t({d, d});
    for (int i = 0; i < d; ++i) t.at(i, i) = 1.0;
    return t;
  };
  p.gate_v = eye();
  p.gate_g = eye();
  p.gate_t = eye();
  p.head_v = Tensor::uniform({d, m}, 0.5, rng);
  p.head_g = Tensor::uniform({d, m}, 0.5, rng);
  p.head_t = Tensor::uniform({d, m}, 0.5, rng);
  return p;
}

}  // namespace

TEST_CASE("supervised contrastive loss vanishes on singleton classes") {
  std::mt19937 rng(7);
  const int n = 4, d = 6;
  Tensor x = random_features(n, d, rng);
  REQUIRE(supervised_contrastive_loss(x, x, x, {0, 1, 2, 3}, 0.07) == 0.0);
}

TEST_CASE("supervised contrastive loss matches a direct computation") {
  std::mt19937 rng(11);
  const int n = 4, d = 5;
  const double tau = 0.1;
  Tensor xv = random_features(n, d, rng);
  Tensor xg = random_features(n, d, rng);
  Tensor xt = random_features(n, d, rng);
  const std::vector<int> labels{0, 0, 1, 1};

  // Direct double-loop oracle.
  double oracle = 0.0;
  for (const Tensor* x : {&xv, &xg, &xt}) {
    // L2-normalized rows.
    Tensor z({n, d});
    for (int i = 0; i < n; ++i) {
      double norm = 0.0;
      for (int j = 0; j < d; ++j) norm += x->at(i, j) * x->at(i, j);
      norm = std::sqrt(norm);
      for (int j = 0; j < d; ++j) z.at(i, j) = x->at(i, j) / norm;
    }
    auto sim = [&](int i, int j) {
      double s = 0.0;
      for (int c = 0; c < d; ++c) s += z.at(i, c) * z.at(j, c);
      return s / tau;
    };
    for (int i = 0; i < n; ++i) {
      double denom = 0.0;
      for (int j = 0; j < n; ++j)
        if (j != i) denom += std::exp(sim(i, j));
      int same = 0;
      for (int j = 0; j < n; ++j)
        if (labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(i)]) ++same;
      for (int j = 0; j < n; ++j) {
        if (j == i || labels[static_cast<std::size_t>(j)] != labels[static_cast<std::size_t>(i)]) continue;
        oracle += -(1.0 / same) * (sim(i, j) - std::log(denom));
      }
    }
  }
  const double got = supervised_contrastive_loss(xv, xg, xt, labels, tau);
  REQUIRE(got == Catch::Approx(oracle).margin(1e-9));
}

TEST_CASE("InfoNCE on identical features equals ln N") {
  std::mt19937 rng(13);
  for (int n : {2, 5, 9}) {
    // Identical across the batch and across modalities: uniform softmax.
    Tensor row = random_features(1, 7, rng);
    Tensor x({n, 7});
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < 7; ++j) x.at(i, j) = row.at(0, j);
    REQUIRE(infonce_loss(x, x, x, 0.07) == Catch::Approx(std::log(n)).margin(1e-6));
  }
  // Single instance: no negatives, loss is zero.
  Tensor one = random_features(1, 7, rng);
  REQUIRE(infonce_loss(one, one, one, 0.07) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("InfoNCE matches a direct triple-loop oracle") {
  std::mt19937 rng(29);
  const int n = 5, d = 4;
  const double tau = 0.2;
  std::vector<Tensor> mods{random_features(n, d, rng), random_features(n, d, rng),
                           random_features(n, d, rng)};

  auto unit_rows = [&](const Tensor& x) {
    Tensor z({n, d});
    for (int i = 0; i < n; ++i) {
      double norm = 0.0;
      for (int j = 0; j < d; ++j) norm += x.at(i, j) * x.at(i, j);
      norm = std::sqrt(norm);
      for (int j = 0; j < d; ++j) z.at(i, j) = x.at(i, j) / norm;
    }
    return z;
  };
  std::vector<Tensor> z;
  for (const auto& m : mods) z.push_back(unit_rows(m));
  auto sim = [&](int a, int b, int i, int j) {
    double s = 0.0;
    for (int c = 0; c < d; ++c)
      s += z[static_cast<std::size_t>(a)].at(i, c) * z[static_cast<std::size_t>(b)].at(j, c);
    return s / tau;
  };

  double oracle = 0.0;
  for (int a = 0; a < 3; ++a)
    for (int i = 0; i < n; ++i) {
      double pos = 0.0;
      for (int b = 0; b < 3; ++b)
        if (b != a) pos += std::exp(sim(a, b, i, i)) / 2.0;
      double neg = 0.0;
      for (int j = 0; j < n; ++j)
        if (j != i) neg += std::exp(sim(a, a, i, j));
      oracle += std::log(pos + neg) - std::log(pos);
    }
  oracle /= 3.0 * n;

  REQUIRE(infonce_loss(mods[0], mods[1], mods[2], tau) == Catch::Approx(oracle).margin(1e-9));
}

TEST_CASE("InfoNCE is invariant under a common orthogonal rotation") {
  std::mt19937 rng(31);
  const int n = 4, d = 3;
  std::vector<Tensor> mods{random_features(n, d, rng), random_features(n, d, rng),
                           random_features(n, d, rng)};
  const double base = infonce_loss(mods[0], mods[1], mods[2], 0.07);

  // Rotation by a fixed permutation-with-sign matrix (orthogonal), applied to
  // every modality so all cosine similarities are preserved.
  auto rotate = [](const Tensor& x) {
    Tensor y({x.dim(0), 3});
    for (int i = 0; i < x.dim(0); ++i) {
      y.at(i, 0) = -x.at(i, 2);
      y.at(i, 1) = x.at(i, 0);
      y.at(i, 2) = x.at(i, 1);
    }
    return y;
  };
  const double rotated = infonce_loss(rotate(mods[0]), rotate(mods[1]), rotate(mods[2]), 0.07);
  REQUIRE(rotated == Catch::Approx(base).margin(1e-9));
}

TEST_CASE("cross entropy of a uniform prediction equals ln m") {
  for (int m : {2, 3, 10}) {
    std::vector<spectral::ProbabilityVector> probs;
    std::vector<int> labels;
    for (int i = 0; i < 4; ++i) {
      spectral::ProbabilityVector p;
      p.probs.assign(static_cast<std::size_t>(m), 1.0 / m);
      probs.push_back(p);
      labels.push_back(i % m);
    }
    REQUIRE(cross_entropy_loss(probs, labels) ==
            Catch::Approx(std::log(static_cast<double>(m))).margin(1e-9));
  }
}

TEST_CASE("cross entropy rewards confident correct predictions") {
  spectral::ProbabilityVector sure{{0.98, 0.01, 0.01}};
  spectral::ProbabilityVector unsure{{0.4, 0.3, 0.3}};
  REQUIRE(cross_entropy_loss({sure}, {0}) < cross_entropy_loss({unsure}, {0}));
}

TEST_CASE("total loss is the weighted sum of its parts") {
  REQUIRE(total_loss(2.0, 3.0, 5.0, 0.1, 0.2, 1.0) == Catch::Approx(0.2 + 0.6 + 5.0));
  REQUIRE_THROWS_AS(total_loss(1, 1, 1, -0.1, 0, 1), std::invalid_argument);
}

TEST_CASE("modality posteriors are normalized distributions") {
  std::mt19937 rng(17);
  const int d = 6, m = 3;
  auto params = identity_params(d, m, rng);
  ModalityFeatures f;
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (int i = 0; i < d; ++i) {
    f.x_v.push_back(dist(rng));
    f.x_g.push_back(dist(rng));
    f.x_t.push_back(dist(rng));
  }
  auto post = modality_posteriors(f, params);
  for (const auto* p : {&post.p_v, &post.p_g, &post.p_t}) {
    REQUIRE(p->probs.size() == m);
    p->validate();
  }
}

TEST_CASE("fusion formula: identical posteriors collapse to the gated path") {
  std::mt19937 rng(19);
  const int d = 4, m = 3;
  auto params = identity_params(d, m, rng);
  params.head_g = params.head_v;
  params.head_t = params.head_v;
  ModalityFeatures f;
  for (int i = 0; i < d; ++i) {
    f.x_v.push_back(0.5 * i);
    f.x_g.push_back(0.5 * i);  // identical features + shared head -> identical posteriors
    f.x_t.push_back(0.5 * i);
  }
  auto post = modality_posteriors(f, params);
  auto fused = fuse_features(f, post, params);
  // Delta = 0, identity gates: fused = x_v + x_g + x_t.
  for (int i = 0; i < d; ++i)
    REQUIRE(fused[static_cast<std::size_t>(i)] == Catch::Approx(1.5 * i).margin(1e-9));
}

TEST_CASE("fusion formula matches a direct evaluation with distinct posteriors") {
  std::mt19937 rng(23);
  const int d = 4, m = 2;
  FusionParams params = identity_params(d, m, rng);
  params.gate_v = Tensor::uniform({d, d}, 0.7, rng);
  params.gate_g = Tensor::uniform({d, d}, 0.7, rng);
  params.gate_t = Tensor::uniform({d, d}, 0.7, rng);

  ModalityFeatures f;
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (int i = 0; i < d; ++i) {
    f.x_v.push_back(dist(rng));
    f.x_g.push_back(dist(rng));
    f.x_t.push_back(dist(rng));
  }
  auto post = modality_posteriors(f, params);
  const double delta = spectral::js_delta(post.p_v, post.p_g, post.p_t);
  auto fused = fuse_features(f, post, params);

  for (int i = 0; i < d; ++i) {
    double gated = 0.0;
    for (int j = 0; j < d; ++j)
      gated += f.x_v[static_cast<std::size_t>(j)] * params.gate_v.at(j, i) +
               f.x_g[static_cast<std::size_t>(j)] * params.gate_g.at(j, i) +
               f.x_t[static_cast<std::size_t>(j)] * params.gate_t.at(j, i);
    const double expected = (1.0 - delta) * gated +
                            delta * (f.x_v[static_cast<std::size_t>(i)] +
                                     f.x_g[static_cast<std::size_t>(i)] +
                                     f.x_t[static_cast<std::size_t>(i)]);
    REQUIRE(fused[static_cast<std::size_t>(i)] == Catch::Approx(expected).margin(1e-9));
  }
}
