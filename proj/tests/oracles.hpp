#pragma once

// Independent reference implementations used as test oracles. These are
// deliberately written as plain loops with no shared code paths with the
// library kernels they check.

#include <cmath>
#include <functional>
#include <vector>

#include "ift/rng.hpp"
#include "ift/tensor.hpp"

namespace oracle {

// Same-padded stride-1 conv, input [Cin,L], kernels [Cout,Cin,K], bias [Cout].
inline ift::Tensor naive_conv1d(const ift::Tensor& in, const ift::Tensor& w, const ift::Tensor& b) {
  const int64_t Cin = in.shape[0], L = in.shape[1];
  const int64_t Cout = w.shape[0], K = w.shape[2];
  const int64_t pad = K / 2;
  ift::Tensor out({Cout, L});
  for (int64_t co = 0; co < Cout; ++co) {
    for (int64_t l = 0; l < L; ++l) {
      double acc = b[co];
      for (int64_t ci = 0; ci < Cin; ++ci) {
        for (int64_t k = 0; k < K; ++k) {
          const int64_t li = l + k - pad;
          if (li >= 0 && li < L) acc += w.at(co, ci, k) * in.at(ci, li);
        }
      }
      out.at(co, l) = acc;
    }
  }
  return out;
}

// One-sided DFT magnitudes of a real frame (length nfft), bins 0..nfft/2.
inline std::vector<double> naive_dft_magnitudes(const std::vector<double>& frame) {
  const size_t n = frame.size();
  std::vector<double> mags(n / 2 + 1);
  for (size_t k = 0; k < mags.size(); ++k) {
    double re = 0.0, im = 0.0;
    for (size_t j = 0; j < n; ++j) {
      const double ang = -2.0 * M_PI * static_cast<double>(k) * static_cast<double>(j) / static_cast<double>(n);
      re += frame[j] * std::cos(ang);
      im += frame[j] * std::sin(ang);
    }
    mags[k] = std::sqrt(re * re + im * im);
  }
  return mags;
}

struct NaiveAttentionWeights {
  ift::Tensor wq, bq, wk, bk, wv, bv, wo, bo;  // w: [D,D] (y = x W + b), b: [D]
};

// Scaled dot-product multi-head self-attention over x [T,D], plain loops.
inline ift::Tensor naive_attention(const ift::Tensor& x, const NaiveAttentionWeights& w, int n_head) {
  const int64_t T = x.shape[0], D = x.shape[1];
  const int64_t dh = D / n_head;
  auto project = [&](const ift::Tensor& wm, const ift::Tensor& bv) {
    ift::Tensor y({T, D});
    for (int64_t i = 0; i < T; ++i)
      for (int64_t j = 0; j < D; ++j) {
        double acc = bv[j];
        for (int64_t k = 0; k < D; ++k) acc += x.at(i, k) * wm.at(k, j);
        y.at(i, j) = acc;
      }
    return y;
  };
  ift::Tensor q = project(w.wq, w.bq), k = project(w.wk, w.bk), v = project(w.wv, w.bv);

  ift::Tensor ctx({T, D});
  for (int h = 0; h < n_head; ++h) {
    const int64_t off = h * dh;
    for (int64_t i = 0; i < T; ++i) {
      // softmax over keys
      std::vector<double> s(static_cast<size_t>(T));
      double mx = -1e300;
      for (int64_t j = 0; j < T; ++j) {
        double acc = 0.0;
        for (int64_t d = 0; d < dh; ++d) acc += q.at(i, off + d) * k.at(j, off + d);
        s[static_cast<size_t>(j)] = acc / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, s[static_cast<size_t>(j)]);
      }
      double sum = 0.0;
      for (auto& e : s) {
        e = std::exp(e - mx);
        sum += e;
      }
      for (auto& e : s) e /= sum;
      for (int64_t d = 0; d < dh; ++d) {
        double acc = 0.0;
        for (int64_t j = 0; j < T; ++j) acc += s[static_cast<size_t>(j)] * v.at(j, off + d);
        ctx.at(i, off + d) = acc;
      }
    }
  }

  ift::Tensor out({T, D});
  for (int64_t i = 0; i < T; ++i)
    for (int64_t j = 0; j < D; ++j) {
      double acc = w.bo[j];
      for (int64_t k2 = 0; k2 < D; ++k2) acc += ctx.at(i, k2) * w.wo.at(k2, j);
      out.at(i, j) = acc;
    }
  return out;
}

// Central finite difference of f with respect to t[i].
inline double fd_derivative(ift::Tensor& t, int64_t i, const std::function<double()>& f,
                            double h = 1e-5) {
  const double saved = t[i];
  t[i] = saved + h;
  const double fp = f();
  t[i] = saved - h;
  const double fm = f();
  t[i] = saved;
  return (fp - fm) / (2.0 * h);
}

// Gradcheck comparison: relative error, with an absolute floor at the
// central-difference roundoff scale (eps*|f|/h ~ 1e-9 for |f| ~ 100, h=1e-5)
// so vanishing derivatives are not judged by an unresolvable ratio.
inline double grad_rel_error(double analytic, double numeric) {
  if (std::abs(analytic - numeric) < 1e-8) return 0.0;
  const double mag = std::max(std::abs(analytic), std::abs(numeric));
  return std::abs(analytic - numeric) / mag;
}

inline double max_abs_diff(const ift::Tensor& a, const ift::Tensor& b) {
  double m = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace oracle
