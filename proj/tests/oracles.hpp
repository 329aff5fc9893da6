#pragma once

// Brute-force reference implementations used as test oracles. Everything here
// is written as plain loops, independent of the library's im2col/GEMM paths.

#include <cmath>
#include <functional>
#include <vector>

#include "davr/autograd.hpp"
#include "davr/rng.hpp"
#include "davr/tensor.hpp"

namespace oracle {

using davr::Rng;
using davr::Tensor;
using davr::Var;

inline Tensor random_tensor(std::vector<int64_t> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, scale);
  return t;
}

inline Tensor naive_conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                           int pad) {
  int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  int64_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  int64_t ho = (h + 2 * pad - kh) / stride + 1;
  int64_t wo = (wd + 2 * pad - kw) / stride + 1;
  Tensor out({n, cout, ho, wo});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t oc = 0; oc < cout; ++oc)
      for (int64_t oy = 0; oy < ho; ++oy)
        for (int64_t ox = 0; ox < wo; ++ox) {
          double acc = b.empty() ? 0.0 : b[oc];
          for (int64_t ic = 0; ic < cin; ++ic)
            for (int64_t ky = 0; ky < kh; ++ky)
              for (int64_t kx = 0; kx < kw; ++kx) {
                int64_t iy = oy * stride - pad + ky;
                int64_t ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                acc += x.at4(i, ic, iy, ix) * w.at4(oc, ic, ky, kx);
              }
          out.at4(i, oc, oy, ox) = acc;
        }
  return out;
}

inline Tensor naive_conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& b,
                                     int stride, int pad, int output_pad) {
  int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  int64_t cout = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  int64_t ho = (h - 1) * stride - 2 * pad + kh + output_pad;
  int64_t wo = (wd - 1) * stride - 2 * pad + kw + output_pad;
  Tensor out({n, cout, ho, wo});
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t oc = 0; oc < cout; ++oc)
      for (int64_t oy = 0; oy < ho; ++oy)
        for (int64_t ox = 0; ox < wo; ++ox) out.at4(i, oc, oy, ox) = b.empty() ? 0.0 : b[oc];
    for (int64_t ic = 0; ic < cin; ++ic)
      for (int64_t iy = 0; iy < h; ++iy)
        for (int64_t ix = 0; ix < wd; ++ix)
          for (int64_t oc = 0; oc < cout; ++oc)
            for (int64_t ky = 0; ky < kh; ++ky)
              for (int64_t kx = 0; kx < kw; ++kx) {
                int64_t oy = iy * stride - pad + ky;
                int64_t ox = ix * stride - pad + kx;
                if (oy < 0 || oy >= ho || ox < 0 || ox >= wo) continue;
                out.at4(i, oc, oy, ox) += x.at4(i, ic, iy, ix) * w.at4(ic, oc, ky, kx);
              }
  }
  return out;
}

inline Tensor naive_linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  int64_t n = x.dim(0), d = x.dim(1), o = w.dim(0);
  Tensor out({n, o});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < o; ++j) {
      double acc = b.empty() ? 0.0 : b[j];
      for (int64_t k = 0; k < d; ++k) acc += x.at2(i, k) * w.at2(j, k);
      out.at2(i, j) = acc;
    }
  return out;
}

// Gram matrix of one [C, M] feature by explicit dot products.
inline Tensor naive_gram(const Tensor& feature_cm) {
  int64_t c = feature_cm.dim(0), m = feature_cm.dim(1);
  Tensor g({c, c});
  for (int64_t i = 0; i < c; ++i)
    for (int64_t j = 0; j < c; ++j) {
      double acc = 0;
      for (int64_t p = 0; p < m; ++p) acc += feature_cm.at2(i, p) * feature_cm.at2(j, p);
      g.at2(i, j) = acc;
    }
  return g;
}

inline double max_rel_err(const Tensor& a, const Tensor& b, double floor = 1e-9) {
  double worst = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    double denom = std::max({std::fabs(a[i]), std::fabs(b[i]), floor});
    worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
  }
  return worst;
}

inline double max_abs_err(const Tensor& a, const Tensor& b) {
  double worst = 0;
  for (int64_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::fabs(a[i] - b[i]));
  return worst;
}

// Central finite differences on `count` sampled entries of `param` against
// the analytic gradient from one backward pass. Starts at eps = 1e-3 and
// refines when the comparison is truncation-limited (the gram-squared terms
// are quartic, so the O(eps^2) error of the coarse step can exceed the
// tolerance even for exact gradients; a genuine backward bug fails at every
// eps). Error metric per entry: max(0, |fd - an| - atol) / max(|fd|, |an|,
// atol); returns the worst over samples of the best-eps error.
inline double fd_gradient_check(const std::function<Var()>& loss_fn, const Var& param, int count,
                                Rng& rng, double atol = 1e-6) {
  param.zero_grad();
  Var loss = loss_fn();
  davr::backward(loss);
  Tensor analytic = param.grad();

  double worst = 0;
  Tensor& value = param.mutable_value();
  for (int s = 0; s < count; ++s) {
    int64_t idx = rng.uniform_int(0, value.numel() - 1);
    double saved = value[idx];
    double best = 1e300;
    for (double eps : {1e-3, 1e-4, 1e-5}) {
      double plus, minus;
      {
        davr::NoGradGuard guard;
        value[idx] = saved + eps;
        plus = loss_fn().item();
        value[idx] = saved - eps;
        minus = loss_fn().item();
        value[idx] = saved;
      }
      double fd = (plus - minus) / (2 * eps);
      double excess = std::max(0.0, std::fabs(fd - analytic[idx]) - atol);
      double denom = std::max({std::fabs(fd), std::fabs(analytic[idx]), atol});
      best = std::min(best, excess / denom);
      if (best == 0.0) break;
    }
    worst = std::max(worst, best);
  }
  return worst;
}

// Jacobi eigenvalue iteration for small symmetric matrices.
inline std::vector<double> symmetric_eigenvalues(Tensor a) {
  int64_t n = a.dim(0);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = i + 1; j < n; ++j) off += a.at2(i, j) * a.at2(i, j);
    if (off < 1e-24) break;
    for (int64_t p = 0; p < n; ++p)
      for (int64_t q = p + 1; q < n; ++q) {
        if (std::fabs(a.at2(p, q)) < 1e-18) continue;
        double theta = (a.at2(q, q) - a.at2(p, p)) / (2 * a.at2(p, q));
        double t = (theta >= 0 ? 1.0 : -1.0) /
                   (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (int64_t k = 0; k < n; ++k) {
          double akp = a.at2(k, p), akq = a.at2(k, q);
          a.at2(k, p) = c * akp - s * akq;
          a.at2(k, q) = s * akp + c * akq;
        }
        for (int64_t k = 0; k < n; ++k) {
          double apk = a.at2(p, k), aqk = a.at2(q, k);
          a.at2(p, k) = c * apk - s * aqk;
          a.at2(q, k) = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> eig(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) eig[static_cast<size_t>(i)] = a.at2(i, i);
  return eig;
}

}  // namespace oracle
