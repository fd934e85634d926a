#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "mtp/tensor.hpp"

// Reverse-mode tape over Tensor. A Graph is built per batch, backward() runs
// the tape in reverse creation order, then the graph is discarded. Ops cover
// exactly what the three encoder branches and the fusion losses need.
namespace mtp::ad {

class Graph {
public:
  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var input(Tensor v) {
    nodes_.push_back(Node{std::move(v), Tensor{}, nullptr});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  const Tensor& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  const Tensor& grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].grad; }

  double scalar(Var v) const {
    const Tensor& t = value(v);
    require(t.numel() == 1, "Graph::scalar: not a scalar node");
    return t[0];
  }

  // Seeds d(loss)/d(loss) = 1 and runs the tape backwards.
  void backward(Var loss) {
    require(value(loss).numel() == 1, "Graph::backward: loss must be scalar");
    for (auto& n : nodes_) {
      n.grad = Tensor(n.value.shape());
    }
    nodes_[static_cast<std::size_t>(loss.id)].grad[0] = 1.0;
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      if (nodes_[static_cast<std::size_t>(i)].backward)
        nodes_[static_cast<std::size_t>(i)].backward(*this, i);
    }
  }

  std::size_t size() const { return nodes_.size(); }

  // ---- elementwise ----

  Var add(Var a, Var b) {
    require(value(a).same_shape(value(b)), "add: shape mismatch");
    Tensor out(value(a).shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = value(a)[i] + value(b)[i];
    return record(std::move(out), [a, b](Graph& g, int self) {
      const Tensor& go = g.node(self).grad;
      for (std::size_t i = 0; i < go.numel(); ++i) {
        g.node(a.id).grad[i] += go[i];
        g.node(b.id).grad[i] += go[i];
      }
    });
  }

  Var sub(Var a, Var b) {
    require(value(a).same_shape(value(b)), "sub: shape mismatch");
    Tensor out(value(a).shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = value(a)[i] - value(b)[i];
    return record(std::move(out), [a, b](Graph& g, int self) {
      const Tensor& go = g.node(self).grad;
      for (std::size_t i = 0; i < go.numel(); ++i) {
        g.node(a.id).grad[i] += go[i];
        g.node(b.id).grad[i] -= go[i];
      }
    });
  }

  Var mul(Var a, Var b) {
    require(value(a).same_shape(value(b)), "mul: shape mismatch");
    Tensor out(value(a).shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = value(a)[i] * value(b)[i];
    return record(std::move(out), [a, b](Graph& g, int self) {
      const Tensor& go = g.node(self).grad;
      for (std::size_t i = 0; i < go.numel(); ++i) {
        g.node(a.id).grad[i] += go[i] * g.node(b.id).value[i];
        g.node(b.id).grad[i] += go[i] * g.node(a.id).value[i];
      }
    });
  }

  Var div(Var a, Var b) {
    require(value(a).same_shape(value(b)), "div: shape mismatch");
    Tensor out(value(a).shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = value(a)[i] / value(b)[i];
    return record(std::move(out), [a, b](Graph& g, int self) {
      const Tensor& go = g.node(self).grad;
      for (std::size_t i = 0; i < go.numel(); ++i) {
        const double bv = g.node(b.id).value[i];
        g.node(a.id).grad[i] += go[i] / bv;
        g.node(b.id).grad[i] -= go[i] * g.node(a.id).value[i] / (bv * bv);
      }
    });
  }

  Var scale(Var a, double c) {
    Tensor out(value(a).shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = value(a)[i] * c;
    return record(std::move(out), [a, c](Graph& g, int self) {
      const Tensor& go = g.node(self).grad;
      for (std::size_t i = 0; i < go.numel(); ++i) g.node(a.id).grad[i] += go[i] * c;
    });
  }

  Var add_const(Var a, double c) {
    Tensor out(value(a).shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = value(a)[i] + c;
    return record(std::move(out), [a](Graph& g, int self) {
      const Tensor& go = g.node(self).grad;
      for (std::size_t i = 0; i < go.numel(); ++i) g.node(a.id).grad[i] += go[i];
    });
  }

  Var relu(Var a) {
    Tensor out(value(a).shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::max(0.0, value(a)[i]);
    return record(std::move(out), [a](Graph& g, int self) {
      const Tensor& go = g.node(self).grad;
      for (std::size_t i = 0; i < go.numel(); ++i)
        if (g.node(a.id).value[i] > 0.0) g.node(a.id).grad[i] += go[i];
    });
  }

  Var exp(Var a) {
    Tensor out(value(a).shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::exp(value(a)[i]);
    return record(std::move(out), [a](Graph& g, int self) {
      const Tensor& go = g.node(self).grad;
      for (std::size_t i = 0; i < go.numel(); ++i)
        g.node(a.id).grad[i] += go[i] * g.node(self).value[i];
    });
  }

  // Natural log of max(x, floor); gradient vanishes below the floor.
  Var log_guard(Var a, double floor = 1e-12) {
    Tensor out(value(a).shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::log(std::max(value(a)[i], floor));
    return record(std::move(out), [a, floor](Graph& g, int self) {
      const Tensor& go = g.node(self).grad;
      for (std::size_t i = 0; i < go.numel(); ++i) {
        const double x = g.node(a.id).value[i];
        if (x > floor) g.node(a.id).grad[i] += go[i] / x;
      }
    });
  }

  Var sqrt_guard(Var a, double eps = 1e-12) {
    Tensor out(value(a).shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::sqrt(std::max(value(a)[i], 0.0));
    return record(std::move(out), [a, eps](Graph& g, int self) {
      const Tensor& go = g.node(self).grad;
      for (std::size_t i = 0; i < go.numel(); ++i) {
        const double y = g.node(self).value[i];
        if (y > eps) g.node(a.id).grad[i] += go[i] * 0.5 / y;
      }
    });
  }

  // ---- linear algebra ----

  Var matmul(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0), "matmul: shape mismatch");
    const int r = av.dim(0), k_n = av.dim(1), c = bv.dim(1);
    Tensor out({r, c});
    for (int i = 0; i < r; ++i)
      for (int k = 0; k < k_n; ++k) {
        const double aik = av.at(i, k);
        if (aik == 0.0) continue;
        for (int j = 0; j < c; ++j) out.at(i, j) += aik * bv.at(k, j);
      }
    return record(std::move(out), [a, b, r, k_n, c](Graph& g, int self) {
      const Tensor& go = g.node(self).grad;
      Tensor& ga = g.node(a.id).grad;
      Tensor& gb = g.node(b.id).grad;
      const Tensor& av2 = g.node(a.id).value;
      const Tensor& bv2 = g.node(b.id).value;
      // dA = dC * B^T ; dB = A^T * dC
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) {
          const double gij = go.at(i, j);
          if (gij == 0.0) continue;
          for (int k = 0; k < k_n; ++k) {
            ga.at(i, k) += gij * bv2.at(k, j);
            gb.at(k, j) += av2.at(i, k) * gij;
          }
        }
    });
  }

  // A * B^T with B given as [c, k].
  Var matmul_nt(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(1), "matmul_nt: shape mismatch");
    const int r = av.dim(0), k_n = av.dim(1), c = bv.dim(0);
    Tensor out({r, c});
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) {
        double acc = 0.0;
        for (int k = 0; k < k_n; ++k) acc += av.at(i, k) * bv.at(j, k);
        out.at(i, j) = acc;
      }
    return record(std::move(out), [a, b, r, k_n, c](Graph& g, int self) {
      const Tensor& go = g.node(self).grad;
      Tensor& ga = g.node(a.id).grad;
      Tensor& gb = g.node(b.id).grad;
      const Tensor& av2 = g.node(a.id).value;
      const Tensor& bv2 = g.node(b.id).value;
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) {
          const double gij = go.at(i, j);
          if (gij == 0.0) continue;
          for (int k = 0; k < k_n; ++k) {
            ga.at(i, k) += gij * bv2.at(j, k);
            gb.at(j, k) += gij * av2.at(i, k);
          }
        }
    });
  }

  // Adds a length-c bias vector to every row of [r, c].
  Var add_rowvec(Var a, Var bias) {
    const Tensor& av = value(a);
    const Tensor& bv = value(bias);
    require(av.rank() == 2 && static_cast<int>(bv.numel()) == av.dim(1), "add_rowvec: shape mismatch");
    const int r = av.dim(0), c = av.dim(1);
    Tensor out({r, c});
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) out.at(i, j) = av.at(i, j) + bv[static_cast<std::size_t>(j)];
    return record(std::move(out), [a, bias, r, c](Graph& g, int self) {
      const Tensor& go = g.node(self).grad;
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) {
          g.node(a.id).grad.at(i, j) += go.at(i, j);
          g.node(bias.id).grad[static_cast<std::size_t>(j)] += go.at(i, j);
        }
    });
  }

  // Scales row i of [r, c] by s[i] ([r, 1]).
  Var mul_rowscalar(Var a, Var s) {
    const Tensor& av = value(a);
    const Tensor& sv = value(s);
    require(av.rank() == 2 && static_cast<int>(sv.numel()) == av.dim(0), "mul_rowscalar: shape mismatch");
    const int r = av.dim(0), c = av.dim(1);
    Tensor out({r, c});
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) out.at(i, j) = av.at(i, j) * sv[static_cast<std::size_t>(i)];
    return record(std::move(out), [a, s, r, c](Graph& g, int self) {
      const Tensor& go = g.node(self).grad;
      for (int i = 0; i < r; ++i) {
        double acc = 0.0;
        for (int j = 0; j < c; ++j) {
          g.node(a.id).grad.at(i, j) += go.at(i, j) * g.node(s.id).value[static_cast<std::size_t>(i)];
          acc += go.at(i, j) * g.node(a.id).value.at(i, j);
        }
        g.node(s.id).grad[static_cast<std::size_t>(i)] += acc;
      }
    });
  }

  // ---- reductions / shaping ----

  Var sum_all(Var a) {
    double acc = 0.0;
    for (std::size_t i = 0; i < value(a).numel(); ++i) acc += value(a)[i];
    return record(Tensor({1}, {acc}), [a](Graph& g, int self) {
      const double go = g.node(self).grad[0];
      for (std::size_t i = 0; i < g.node(a.id).grad.numel(); ++i) g.node(a.id).grad[i] += go;
    });
  }

  Var row_sums(Var a) {
    const Tensor& av = value(a);
    require(av.rank() == 2, "row_sums: expected matrix");
    const int r = av.dim(0), c = av.dim(1);
    Tensor out({r, 1});
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) out.at(i, 0) += av.at(i, j);
    return record(std::move(out), [a, r, c](Graph& g, int self) {
      const Tensor& go = g.node(self).grad;
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) g.node(a.id).grad.at(i, j) += go.at(i, 0);
    });
  }

  // Mean over rows: [r, c] -> [1, c].
  Var mean_rows(Var a) {
    const Tensor& av = value(a);
    require(av.rank() == 2, "mean_rows: expected matrix");
    const int r = av.dim(0), c = av.dim(1);
    Tensor out({1, c});
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) out.at(0, j) += av.at(i, j) / r;
    return record(std::move(out), [a, r, c](Graph& g, int self) {
      const Tensor& go = g.node(self).grad;
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) g.node(a.id).grad.at(i, j) += go.at(0, j) / r;
    });
  }

  Var transpose(Var a) {
    const Tensor& av = value(a);
    require(av.rank() == 2, "transpose: expected matrix");
    const int r = av.dim(0), c = av.dim(1);
    Tensor out({c, r});
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) out.at(j, i) = av.at(i, j);
    return record(std::move(out), [a, r, c](Graph& g, int self) {
      const Tensor& go = g.node(self).grad;
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) g.node(a.id).grad.at(i, j) += go.at(j, i);
    });
  }

  Var reshape(Var a, std::vector<int> shape) {
    Tensor out(std::move(shape), value(a).vec());
    require(out.numel() == value(a).numel(), "reshape: element count mismatch");
    return record(std::move(out), [a](Graph& g, int self) {
      const Tensor& go = g.node(self).grad;
      for (std::size_t i = 0; i < go.numel(); ++i) g.node(a.id).grad[i] += go[i];
    });
  }

  Var concat_rows(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_rows: empty");
    const int c = value(parts[0]).dim(1);
    int r = 0;
    for (Var p : parts) {
      require(value(p).rank() == 2 && value(p).dim(1) == c, "concat_rows: column mismatch");
      r += value(p).dim(0);
    }
    Tensor out({r, c});
    int row = 0;
    for (Var p : parts) {
      const Tensor& pv = value(p);
      for (int i = 0; i < pv.dim(0); ++i, ++row)
        for (int j = 0; j < c; ++j) out.at(row, j) = pv.at(i, j);
    }
    return record(std::move(out), [parts, c](Graph& g, int self) {
      const Tensor& go = g.node(self).grad;
      int row = 0;
      for (Var p : parts) {
        Tensor& gp = g.node(p.id).grad;
        for (int i = 0; i < gp.dim(0); ++i, ++row)
          for (int j = 0; j < c; ++j) gp.at(i, j) += go.at(row, j);
      }
    });
  }

  Var concat_cols(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_cols: empty");
    const int r = value(parts[0]).dim(0);
    int c = 0;
    for (Var p : parts) {
      require(value(p).rank() == 2 && value(p).dim(0) == r, "concat_cols: row mismatch");
      c += value(p).dim(1);
    }
    Tensor out({r, c});
    int col = 0;
    for (Var p : parts) {
      const Tensor& pv = value(p);
      for (int j = 0; j < pv.dim(1); ++j, ++col)
        for (int i = 0; i < r; ++i) out.at(i, col) = pv.at(i, j);
    }
    return record(std::move(out), [parts, r](Graph& g, int self) {
      const Tensor& go = g.node(self).grad;
      int col = 0;
      for (Var p : parts) {
        Tensor& gp = g.node(p.id).grad;
        for (int j = 0; j < gp.dim(1); ++j, ++col)
          for (int i = 0; i < r; ++i) gp.at(i, j) += go.at(i, col);
      }
    });
  }

  // ---- normalization / probability ----

  // Rows scaled to unit L2 norm; zero rows stay zero.
  Var rows_l2_normalize(Var a, double eps = 1e-12) {
    const Tensor& av = value(a);
    require(av.rank() == 2, "rows_l2_normalize: expected matrix");
    const int r = av.dim(0), c = av.dim(1);
    Tensor out({r, c});
    std::vector<double> norms(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) {
      double acc = 0.0;
      for (int j = 0; j < c; ++j) acc += av.at(i, j) * av.at(i, j);
      const double n = std::sqrt(acc);
      norms[static_cast<std::size_t>(i)] = n;
      if (n > eps)
        for (int j = 0; j < c; ++j) out.at(i, j) = av.at(i, j) / n;
    }
    return record(std::move(out), [a, r, c, norms, eps](Graph& g, int self) {
      const Tensor& go = g.node(self).grad;
      const Tensor& y = g.node(self).value;
      for (int i = 0; i < r; ++i) {
        const double n = norms[static_cast<std::size_t>(i)];
        if (n <= eps) continue;
        double dot = 0.0;
        for (int j = 0; j < c; ++j) dot += go.at(i, j) * y.at(i, j);
        for (int j = 0; j < c; ++j)
          g.node(a.id).grad.at(i, j) += (go.at(i, j) - dot * y.at(i, j)) / n;
      }
    });
  }

  Var softmax_rows(Var a) {
    const Tensor& av = value(a);
    require(av.rank() == 2, "softmax_rows: expected matrix");
    const int r = av.dim(0), c = av.dim(1);
    Tensor out({r, c});
    for (int i = 0; i < r; ++i) {
      double mx = av.at(i, 0);
      for (int j = 1; j < c; ++j) mx = std::max(mx, av.at(i, j));
      double z = 0.0;
      for (int j = 0; j < c; ++j) z += std::exp(av.at(i, j) - mx);
      for (int j = 0; j < c; ++j) out.at(i, j) = std::exp(av.at(i, j) - mx) / z;
    }
    return record(std::move(out), [a, r, c](Graph& g, int self) {
      const Tensor& go = g.node(self).grad;
      const Tensor& y = g.node(self).value;
      for (int i = 0; i < r; ++i) {
        double dot = 0.0;
        for (int j = 0; j < c; ++j) dot += go.at(i, j) * y.at(i, j);
        for (int j = 0; j < c; ++j)
          g.node(a.id).grad.at(i, j) += y.at(i, j) * (go.at(i, j) - dot);
      }
    });
  }

  // Zero mean / unit variance over all elements; below the variance floor the
  // output collapses to zeros (matching the image standardization contract).
  Var standardize_all(Var a, double var_floor = 1e-12) {
    const Tensor& av = value(a);
    const std::size_t n = av.numel();
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += av[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (av[i] - mean) * (av[i] - mean);
    var /= static_cast<double>(n);
    Tensor out(av.shape());
    const bool flat = var < var_floor;
    const double sd = flat ? 1.0 : std::sqrt(var);
    if (!flat)
      for (std::size_t i = 0; i < n; ++i) out[i] = (av[i] - mean) / sd;
    return record(std::move(out), [a, n, sd, flat](Graph& g, int self) {
      if (flat) return;
      const Tensor& go = g.node(self).grad;
      const Tensor& y = g.node(self).value;
      double gmean = 0.0, gydot = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        gmean += go[i];
        gydot += go[i] * y[i];
      }
      gmean /= static_cast<double>(n);
      gydot /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i)
        g.node(a.id).grad[i] += (go[i] - gmean - y[i] * gydot) / sd;
    });
  }

  // Mean of the embedding rows selected by ids: [V, d] -> [1, d].
  Var embedding_mean(Var table, std::vector<int> ids) {
    const Tensor& tv = value(table);
    require(tv.rank() == 2 && !ids.empty(), "embedding_mean: bad inputs");
    const int d = tv.dim(1);
    Tensor out({1, d});
    for (int id : ids) {
      require(id >= 0 && id < tv.dim(0), "embedding_mean: id out of range");
      for (int j = 0; j < d; ++j) out.at(0, j) += tv.at(id, j) / static_cast<double>(ids.size());
    }
    return record(std::move(out), [table, ids, d](Graph& g, int self) {
      const Tensor& go = g.node(self).grad;
      const double inv = 1.0 / static_cast<double>(ids.size());
      for (int id : ids)
        for (int j = 0; j < d; ++j) g.node(table.id).grad.at(id, j) += go.at(0, j) * inv;
    });
  }

  // ---- convolution / imaging ----

  // 1D convolution over [l, Cin] with kernel [k, Cin, Cout] and zero "same"
  // padding, stride 1.
  Var conv1d_same(Var x, Var kernel, Var bias) {
    const Tensor& xv = value(x);
    const Tensor& kv = value(kernel);
    require(xv.rank() == 2 && kv.rank() == 3 && kv.dim(1) == xv.dim(1), "conv1d_same: shape mismatch");
    const int l = xv.dim(0), cin = xv.dim(1), kw = kv.dim(0), cout = kv.dim(2);
    require(static_cast<int>(value(bias).numel()) == cout, "conv1d_same: bias size mismatch");
    const int pad = (kw - 1) / 2;
    Tensor out({l, cout});
    for (int i = 0; i < l; ++i)
      for (int o = 0; o < cout; ++o) {
        double acc = value(bias)[static_cast<std::size_t>(o)];
        for (int t = 0; t < kw; ++t) {
          const int src = i + t - pad;
          if (src < 0 || src >= l) continue;
          for (int c = 0; c < cin; ++c) acc += xv.at(src, c) * kv.at(t, c, o);
        }
        out.at(i, o) = acc;
      }
    return record(std::move(out), [x, kernel, bias, l, cin, kw, cout, pad](Graph& g, int self) {
      const Tensor& go = g.node(self).grad;
      const Tensor& xv2 = g.node(x.id).value;
      const Tensor& kv2 = g.node(kernel.id).value;
      for (int i = 0; i < l; ++i)
        for (int o = 0; o < cout; ++o) {
          const double gio = go.at(i, o);
          if (gio == 0.0) continue;
          g.node(bias.id).grad[static_cast<std::size_t>(o)] += gio;
          for (int t = 0; t < kw; ++t) {
            const int src = i + t - pad;
            if (src < 0 || src >= l) continue;
            for (int c = 0; c < cin; ++c) {
              g.node(x.id).grad.at(src, c) += gio * kv2.at(t, c, o);
              g.node(kernel.id).grad.at(t, c, o) += gio * xv2.at(src, c);
            }
          }
        }
    });
  }

  // 2D convolution over [Cin, H, W]; kernel laid out [Cout, Cin*kh*kw] to fit
  // the rank-3 Tensor limit. Zero "same" padding when same_pad, else valid.
  Var conv2d(Var x, Var kernel, Var bias, int kh, int kw, int stride, bool same_pad) {
    const Tensor& xv = value(x);
    const Tensor& kv = value(kernel);
    require(xv.rank() == 3 && kv.rank() == 2, "conv2d: shape mismatch");
    const int cin = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
    const int cout = kv.dim(0);
    require(kv.dim(1) == cin * kh * kw, "conv2d: kernel layout mismatch");
    require(static_cast<int>(value(bias).numel()) == cout, "conv2d: bias size mismatch");
    const int ph = same_pad ? (kh - 1) / 2 : 0;
    const int pw = same_pad ? (kw - 1) / 2 : 0;
    const int oh = same_pad ? (h + stride - 1) / stride : (h - kh) / stride + 1;
    const int ow = same_pad ? (w + stride - 1) / stride : (w - kw) / stride + 1;
    require(oh >= 1 && ow >= 1, "conv2d: output collapsed");
    Tensor out({cout, oh, ow});
    for (int o = 0; o < cout; ++o)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          double acc = value(bias)[static_cast<std::size_t>(o)];
          for (int c = 0; c < cin; ++c)
            for (int a = 0; a < kh; ++a) {
              const int yy = i * stride + a - ph;
              if (yy < 0 || yy >= h) continue;
              for (int b = 0; b < kw; ++b) {
                const int xx = j * stride + b - pw;
                if (xx < 0 || xx >= w) continue;
                acc += xv.at(c, yy, xx) * kv.at(o, (c * kh + a) * kw + b);
              }
            }
          out.at(o, i, j) = acc;
        }
    return record(std::move(out),
                  [x, kernel, bias, cin, h, w, cout, kh, kw, stride, ph, pw, oh, ow](Graph& g, int self) {
      const Tensor& go = g.node(self).grad;
      const Tensor& xv2 = g.node(x.id).value;
      const Tensor& kv2 = g.node(kernel.id).value;
      for (int o = 0; o < cout; ++o)
        for (int i = 0; i < oh; ++i)
          for (int j = 0; j < ow; ++j) {
            const double gij = go.at(o, i, j);
            if (gij == 0.0) continue;
            g.node(bias.id).grad[static_cast<std::size_t>(o)] += gij;
            for (int c = 0; c < cin; ++c)
              for (int a = 0; a < kh; ++a) {
                const int yy = i * stride + a - ph;
                if (yy < 0 || yy >= h) continue;
                for (int b = 0; b < kw; ++b) {
                  const int xx = j * stride + b - pw;
                  if (xx < 0 || xx >= w) continue;
                  g.node(x.id).grad.at(c, yy, xx) += gij * kv2.at(o, (c * kh + a) * kw + b);
                  g.node(kernel.id).grad.at(o, (c * kh + a) * kw + b) += gij * xv2.at(c, yy, xx);
                }
              }
          }
    });
  }

  // Bilinear resize of [C, H, W] to [C, oh, ow] with corner alignment.
  Var bilinear_resize(Var x, int oh, int ow) {
    const Tensor& xv = value(x);
    require(xv.rank() == 3, "bilinear_resize: expected [C, H, W]");
    require(oh >= 1 && ow >= 1, "bilinear_resize: bad target size");
    const int c_n = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
    const double sy = oh > 1 ? static_cast<double>(h - 1) / (oh - 1) : 0.0;
    const double sx = ow > 1 ? static_cast<double>(w - 1) / (ow - 1) : 0.0;
    Tensor out({c_n, oh, ow});
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        const double fy = i * sy, fx = j * sx;
        const int y0 = std::min(static_cast<int>(fy), h - 1), y1 = std::min(y0 + 1, h - 1);
        const int x0 = std::min(static_cast<int>(fx), w - 1), x1 = std::min(x0 + 1, w - 1);
        const double dy = fy - y0, dx = fx - x0;
        for (int c = 0; c < c_n; ++c)
          out.at(c, i, j) = (1 - dy) * (1 - dx) * xv.at(c, y0, x0) + (1 - dy) * dx * xv.at(c, y0, x1) +
                            dy * (1 - dx) * xv.at(c, y1, x0) + dy * dx * xv.at(c, y1, x1);
      }
    return record(std::move(out), [x, c_n, h, w, oh, ow, sy, sx](Graph& g, int self) {
      const Tensor& go = g.node(self).grad;
      Tensor& gx = g.node(x.id).grad;
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          const double fy = i * sy, fx = j * sx;
          const int y0 = std::min(static_cast<int>(fy), h - 1), y1 = std::min(y0 + 1, h - 1);
          const int x0 = std::min(static_cast<int>(fx), w - 1), x1 = std::min(x0 + 1, w - 1);
          const double dy = fy - y0, dx = fx - x0;
          for (int c = 0; c < c_n; ++c) {
            const double gij = go.at(c, i, j);
            gx.at(c, y0, x0) += gij * (1 - dy) * (1 - dx);
            gx.at(c, y0, x1) += gij * (1 - dy) * dx;
            gx.at(c, y1, x0) += gij * dy * (1 - dx);
            gx.at(c, y1, x1) += gij * dy * dx;
          }
        }
    });
  }

private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void(Graph&, int)> backward;
  };

  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }

  Var record(Tensor value, std::function<void(Graph&, int)> backward) {
    nodes_.push_back(Node{std::move(value), Tensor{}, std::move(backward)});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
};

using Var = Graph::Var;

}  // namespace mtp::ad
