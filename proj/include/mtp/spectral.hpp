#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mtp/tensor.hpp"

// Shared spectral primitives: DFT/inverse DFT, Hamming filterbank, spectrum
// compression, spectral pooling and JS divergence. Everything here is a pure
// function; the encoder branches and their autodiff counterparts are defined
// in terms of these.
namespace mtp::spectral {

// Complex spectrum stored as separate real/imag planes, [B, F_bins, C].
struct ComplexSpectrum {
  Tensor real;
  Tensor imag;
  int origin_length = 0;

  void validate() const {
    require(real.same_shape(imag), "ComplexSpectrum: real/imag shape mismatch");
    require(real.rank() == 3, "ComplexSpectrum: expected rank-3 tensors");
    require(origin_length >= 1, "ComplexSpectrum: origin_length must be >= 1");
    require(real.all_finite() && imag.all_finite(), "ComplexSpectrum: non-finite entries");
  }
};

// Windowed bandpass filterbank described by frequency-response magnitudes on
// the DFT grid, [F, F_bins].
struct FilterBank {
  int taps_per_filter = 0;
  int num_filters = 0;
  Tensor responses;
};

struct ProbabilityVector {
  std::vector<double> probs;

  void validate() const {
    double sum = 0.0;
    for (double p : probs) {
      require(p >= 0.0 && std::isfinite(p), "ProbabilityVector: negative or non-finite entry");
      sum += p;
    }
    require(std::abs(sum - 1.0) <= 1e-6, "ProbabilityVector: entries must sum to 1");
  }
};

// Precomputed cos/sin tables for an n-point transform. The O(n^2) definition
// is the contract; n stays small throughout.
struct DftTables {
  int n;
  std::vector<double> cos_kt;  // [n*n], cos(2*pi*k*i/n)
  std::vector<double> sin_kt;

  explicit DftTables(int n_) : n(n_), cos_kt(static_cast<std::size_t>(n_) * n_),
                               sin_kt(static_cast<std::size_t>(n_) * n_) {
    const double w = 2.0 * std::numbers::pi / n;
    for (int k = 0; k < n; ++k)
      for (int i = 0; i < n; ++i) {
        cos_kt[static_cast<std::size_t>(k) * n + i] = std::cos(w * k * i);
        sin_kt[static_cast<std::size_t>(k) * n + i] = std::sin(w * k * i);
      }
  }
};

// Forward DFT along the middle (time) axis: bin k = sum_i x[i] e^{-j2пki/n}.
// Full spectrum is retained.
inline ComplexSpectrum fft_forward(const Tensor& x) {
  require(x.rank() == 3, "fft_forward: expected [B, n, C]");
  require(x.all_finite(), "fft_forward: non-finite input");
  const int b_n = x.dim(0), n = x.dim(1), c_n = x.dim(2);
  DftTables t(n);
  ComplexSpectrum s{Tensor({b_n, n, c_n}), Tensor({b_n, n, c_n}), n};
  for (int b = 0; b < b_n; ++b)
    for (int k = 0; k < n; ++k)
      for (int c = 0; c < c_n; ++c) {
        double re = 0.0, im = 0.0;
        for (int i = 0; i < n; ++i) {
          const double v = x.at(b, i, c);
          re += v * t.cos_kt[static_cast<std::size_t>(k) * n + i];
          im -= v * t.sin_kt[static_cast<std::size_t>(k) * n + i];
        }
        s.real.at(b, k, c) = re;
        s.imag.at(b, k, c) = im;
      }
  return s;
}

// Inverse DFT; returns the real part. For conjugate-symmetric spectra the
// imaginary residue is asserted to be negligible.
inline Tensor ifft_inverse(const ComplexSpectrum& s, bool assert_real = false) {
  s.validate();
  const int b_n = s.real.dim(0), n = s.real.dim(1), c_n = s.real.dim(2);
  require(n == s.origin_length, "ifft_inverse: bin count != origin_length");
  DftTables t(n);
  Tensor x({b_n, n, c_n});
  for (int b = 0; b < b_n; ++b)
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < c_n; ++c) {
        double re = 0.0, im = 0.0;
        for (int k = 0; k < n; ++k) {
          const double ck = t.cos_kt[static_cast<std::size_t>(k) * n + i];
          const double sk = t.sin_kt[static_cast<std::size_t>(k) * n + i];
          re += s.real.at(b, k, c) * ck - s.imag.at(b, k, c) * sk;
          im += s.real.at(b, k, c) * sk + s.imag.at(b, k, c) * ck;
        }
        if (assert_real)
          require(std::abs(im / n) < 1e-6, "ifft_inverse: imaginary residue too large");
        x.at(b, i, c) = re / n;
      }
  return x;
}

// Hamming taper, w_i = 0.54 - 0.46 cos(2*pi*i/(s-1)).
inline std::vector<double> hamming_window(int s) {
  require(s >= 2, "hamming_window: s must be >= 2");
  std::vector<double> w(static_cast<std::size_t>(s));
  for (int i = 0; i < s; ++i)
    w[static_cast<std::size_t>(i)] =
        0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * i / (s - 1));
  return w;
}

// Bank of F equal-width ideal bandpass filters over [0, pi], windowed by a
// Hamming taper of s taps, zero-padded to n_bins, expressed as
// frequency-response magnitudes on the DFT grid. Rows are peak-normalized.
inline FilterBank build_filterbank(int s, int f_count, int n_bins) {
  require(s >= 2, "build_filterbank: s must be >= 2");
  require(f_count >= 1, "build_filterbank: F must be >= 1");
  require(n_bins >= s, "build_filterbank: n_bins must be >= s");

  const auto window = hamming_window(s);
  FilterBank bank{s, f_count, Tensor({f_count, n_bins})};
  const double half = (s - 1) / 2.0;
  for (int f = 0; f < f_count; ++f) {
    const double lo = std::numbers::pi * f / f_count;
    const double hi = std::numbers::pi * (f + 1) / f_count;
    // Ideal bandpass taps: difference of two sinc lowpass responses.
    std::vector<double> taps(static_cast<std::size_t>(s));
    for (int i = 0; i < s; ++i) {
      const double m = i - half;
      double ideal;
      if (std::abs(m) < 1e-12)
        ideal = (hi - lo) / std::numbers::pi;
      else
        ideal = (std::sin(hi * m) - std::sin(lo * m)) / (std::numbers::pi * m);
      taps[static_cast<std::size_t>(i)] = ideal * window[static_cast<std::size_t>(i)];
    }
    // Zero-pad to n_bins and take the DFT magnitude.
    Tensor padded({1, n_bins, 1});
    for (int i = 0; i < s; ++i) padded.at(0, i, 0) = taps[static_cast<std::size_t>(i)];
    ComplexSpectrum spec = fft_forward(padded);
    double peak = 0.0;
    std::vector<double> mag(static_cast<std::size_t>(n_bins));
    for (int k = 0; k < n_bins; ++k) {
      const double re = spec.real.at(0, k, 0), im = spec.imag.at(0, k, 0);
      mag[static_cast<std::size_t>(k)] = std::sqrt(re * re + im * im);
      peak = std::max(peak, mag[static_cast<std::size_t>(k)]);
    }
    for (int k = 0; k < n_bins; ++k)
      bank.responses.at(f, k) = peak > 0.0 ? mag[static_cast<std::size_t>(k)] / peak : 0.0;
  }
  return bank;
}

// Summed response over the bank; spectrum compression multiplies the power
// spectrum by this once instead of F times.
inline std::vector<double> summed_response(const FilterBank& bank) {
  const int f_count = bank.responses.dim(0), n_bins = bank.responses.dim(1);
  std::vector<double> sum(static_cast<std::size_t>(n_bins), 0.0);
  for (int f = 0; f < f_count; ++f)
    for (int k = 0; k < n_bins; ++k) sum[static_cast<std::size_t>(k)] += bank.responses.at(f, k);
  return sum;
}

// Spectrum compression: sum_f (1/c) |S|^2 (x) response_f.
inline Tensor spectrum_compress(const ComplexSpectrum& s, const FilterBank& bank, int c_norm) {
  s.validate();
  require(c_norm >= 1, "spectrum_compress: c must be >= 1");
  const int b_n = s.real.dim(0), n = s.real.dim(1), c_n = s.real.dim(2);
  require(bank.responses.dim(1) == n, "spectrum_compress: filterbank bin count mismatch");
  const auto total = summed_response(bank);
  Tensor out({b_n, n, c_n});
  for (int b = 0; b < b_n; ++b)
    for (int k = 0; k < n; ++k)
      for (int c = 0; c < c_n; ++c) {
        const double re = s.real.at(b, k, c), im = s.imag.at(b, k, c);
        out.at(b, k, c) = (re * re + im * im) / c_norm * total[static_cast<std::size_t>(k)];
      }
  return out;
}

// Width-k sliding mean along the frequency axis, stride 1, edge-replicate
// padding so the shape is preserved. The window covers [i, i+k-1].
inline Tensor spectral_average_pool(const Tensor& p, int k) {
  require(p.rank() == 3, "spectral_average_pool: expected [B, F_bins, C]");
  require(k >= 1, "spectral_average_pool: k must be >= 1");
  const int b_n = p.dim(0), n = p.dim(1), c_n = p.dim(2);
  Tensor out({b_n, n, c_n});
  for (int b = 0; b < b_n; ++b)
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < c_n; ++c) {
        double acc = 0.0;
        for (int j = 0; j < k; ++j) {
          const int idx = std::min(i + j, n - 1);
          acc += p.at(b, idx, c);
        }
        out.at(b, i, c) = acc / k;
      }
  return out;
}

namespace detail {

inline double kl_base2(const std::vector<double>& p, const std::vector<double>& q) {
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) acc += p[i] * std::log2(p[i] / q[i]);
  }
  return acc;
}

inline double js_base2(const ProbabilityVector& a, const ProbabilityVector& b) {
  std::vector<double> mid(a.probs.size());
  for (std::size_t i = 0; i < mid.size(); ++i) mid[i] = 0.5 * (a.probs[i] + b.probs[i]);
  return 0.5 * kl_base2(a.probs, mid) + 0.5 * kl_base2(b.probs, mid);
}

}  // namespace detail

// Mean pairwise Jensen-Shannon divergence of the three posteriors, base-2
// logs so the result lies in [0, 1].
inline double js_delta(const ProbabilityVector& p_v, const ProbabilityVector& p_g,
                       const ProbabilityVector& p_t) {
  p_v.validate();
  p_g.validate();
  p_t.validate();
  require(p_v.probs.size() == p_g.probs.size() && p_g.probs.size() == p_t.probs.size(),
          "js_delta: length mismatch");
  return (detail::js_base2(p_v, p_g) + detail::js_base2(p_v, p_t) + detail::js_base2(p_g, p_t)) / 3.0;
}

}  // namespace mtp::spectral
