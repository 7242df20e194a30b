#pragma once

// Slow, loop-based reference implementations used as test oracles. They
// share no code with the library beyond Tensor storage access.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <set>
#include <vector>

#include "rlab/numcore/tensor.hpp"

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

inline Matrix to_matrix(const rlab::num::Tensor& t) {
  Matrix m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t.at(i, j);
  return m;
}

inline Matrix layer_norm(const Matrix& x, const rlab::num::Tensor& gamma,
                         const rlab::num::Tensor& beta, double eps = 1e-5) {
  Matrix y = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i].size());
    double mu = 0.0, var = 0.0;
    for (double v : x[i]) mu += v;
    mu /= d;
    for (double v : x[i]) var += (v - mu) * (v - mu);
    var /= d;
    for (std::size_t j = 0; j < x[i].size(); ++j) {
      y[i][j] = gamma.at(j) * (x[i][j] - mu) / std::sqrt(var + eps) + beta.at(j);
    }
  }
  return y;
}

inline Matrix affine(const Matrix& x, const rlab::num::Tensor& w, const rlab::num::Tensor& b) {
  Matrix y(x.size(), std::vector<double>(w.cols(), 0.0));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) {
      double s = b.at(j);
      for (std::size_t k = 0; k < w.rows(); ++k) s += x[i][k] * w.at(k, j);
      y[i][j] = s;
    }
  return y;
}

// Per-row attention from one sequence's qkv rows [L x 3D], head h:
// weight(i, j) = exp(q_i k_j / sqrt(d_h)) / sum_k exp(q_i k_k / sqrt(d_h)).
inline double dot_scaled(const Matrix& qkv, std::size_t dim, std::size_t heads, std::size_t h,
                         std::size_t i, std::size_t j) {
  const std::size_t dh = dim / heads;
  double s = 0.0;
  for (std::size_t c = 0; c < dh; ++c) s += qkv[i][h * dh + c] * qkv[j][dim + h * dh + c];
  return s / std::sqrt(static_cast<double>(dh));
}

// Denominator split by key groups: returns sum_{k in group} exp(score(i, k)).
inline double partial_denominator(const Matrix& qkv, std::size_t dim, std::size_t heads,
                                  std::size_t h, std::size_t i,
                                  const std::vector<std::size_t>& keys) {
  double s = 0.0;
  for (std::size_t k : keys) s += std::exp(dot_scaled(qkv, dim, heads, h, i, k));
  return s;
}

// HSIC by the double-loop definition with an explicit centering matrix
// H = I - 11^T / N: (1/(N-1)^2) sum_ij (HKH)_ij (HLH)_ij.
inline double hsic(const Matrix& K, const Matrix& L) {
  const std::size_t n = K.size();
  Matrix H(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) H[i][j] = (i == j ? 1.0 : 0.0) - 1.0 / n;
  auto mult = [n](const Matrix& a, const Matrix& b) {
    Matrix c(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t k = 0; k < n; ++k) c[i][j] += a[i][k] * b[k][j];
    return c;
  };
  const Matrix kc = mult(mult(H, K), H), lc = mult(mult(H, L), H);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) s += kc[i][j] * lc[i][j];
  return s / ((n - 1.0) * (n - 1.0));
}

inline Matrix gram(const Matrix& x) {
  const std::size_t n = x.size();
  Matrix g(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < x[i].size(); ++k) g[i][j] += x[i][k] * x[j][k];
  return g;
}

inline double cka(const Matrix& x, const Matrix& y) {
  const Matrix kx = gram(x), ky = gram(y);
  return hsic(kx, ky) / std::sqrt(hsic(kx, kx) * hsic(ky, ky));
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
}

// Threshold sweep: walk every distinct anchor-patch similarity from the top,
// stop at the first threshold whose union with the anchors reaches `target`,
// then keep the anchors plus the most similar non-anchors up to exactly
// `target` (on equal similarity the higher index stays). Returns the
// replaced set.
inline std::set<std::size_t> cluster_sweep(const Matrix& means,
                                           const std::vector<std::size_t>& anchors,
                                           std::size_t target) {
  const std::size_t n = means.size();
  std::vector<double> best(n, -2.0);
  std::set<double> values;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a : anchors) {
      const double c = cosine(means[i], means[a]);
      best[i] = std::max(best[i], c);
      values.insert(c);
    }
  std::set<std::size_t> anchor_set(anchors.begin(), anchors.end());
  std::set<std::size_t> chosen;
  for (auto t = values.rbegin(); t != values.rend(); ++t) {
    std::set<std::size_t> u = anchor_set;
    for (std::size_t i = 0; i < n; ++i)
      if (best[i] >= *t) u.insert(i);
    chosen = u;
    if (u.size() >= target) break;
  }
  if (chosen.size() <= target) return chosen;
  std::vector<std::size_t> others;
  for (std::size_t i : chosen)
    if (!anchor_set.count(i)) others.push_back(i);
  std::sort(others.begin(), others.end(), [&](std::size_t a, std::size_t b) {
    return best[a] != best[b] ? best[a] > best[b] : a > b;
  });
  std::set<std::size_t> out = anchor_set;
  for (std::size_t i = 0; out.size() < target && i < others.size(); ++i) out.insert(others[i]);
  return out;
}

}  // namespace oracle
