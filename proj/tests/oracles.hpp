#pragma once

// Scalar reference implementations used as independent oracles. Plain loops
// over std::vector, no tensor ops.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "timeprompt/random.hpp"
#include "timeprompt/tensor.hpp"

namespace oracle {

using Vec = std::vector<double>;

inline Vec to_vec(const timeprompt::Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline timeprompt::Tensor random_tensor(timeprompt::Shape shape, timeprompt::Rng& rng, double scale = 1.0,
                                        bool trainable = false) {
  auto data = rng.normal_vector(timeprompt::numel(shape), 0.0, scale);
  return trainable ? timeprompt::Tensor::parameter(std::move(shape), std::move(data))
                   : timeprompt::Tensor::constant(std::move(shape), std::move(data));
}

inline double max_abs_diff(const Vec& a, const Vec& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return a.size() == b.size() ? m : INFINITY;
}

// C = A (m x k) * B (k x n), row-major.
inline Vec matmul(const Vec& a, const Vec& b, std::size_t m, std::size_t k, std::size_t n) {
  Vec c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t t = 0; t < k; ++t) c[i * n + j] += a[i * k + t] * b[t * n + j];
  return c;
}

// Multi-head cross attention, one query sequence at a time.
//   query: G x M x D; source: G_s x S x D with G_s either 1 (shared) or G.
//   Weights D x D, row convention (x W). Output G x M x D.
inline Vec attention(const Vec& query, const Vec& source, std::size_t g_count, std::size_t m, std::size_t s,
                     std::size_t d, std::size_t heads, const Vec& wq, const Vec& wk, const Vec& wv, const Vec& wo,
                     bool shared_source) {
  const std::size_t hd = d / heads;
  Vec out(g_count * m * d, 0.0);
  for (std::size_t g = 0; g < g_count; ++g) {
    const double* q_in = &query[g * m * d];
    const double* src = &source[(shared_source ? 0 : g) * s * d];
    Vec q(m * d, 0.0), k(s * d, 0.0), v(s * d, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < d; ++j)
        for (std::size_t t = 0; t < d; ++t) q[i * d + j] += q_in[i * d + t] * wq[t * d + j];
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t j = 0; j < d; ++j)
        for (std::size_t t = 0; t < d; ++t) {
          k[i * d + j] += src[i * d + t] * wk[t * d + j];
          v[i * d + j] += src[i * d + t] * wv[t * d + j];
        }
    Vec ctx(m * d, 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < m; ++i) {
        Vec score(s, 0.0);
        for (std::size_t j = 0; j < s; ++j) {
          for (std::size_t t = 0; t < hd; ++t) score[j] += q[i * d + h * hd + t] * k[j * d + h * hd + t];
          score[j] /= std::sqrt(static_cast<double>(hd));
        }
        const double mx = *std::max_element(score.begin(), score.end());
        double z = 0.0;
        for (double& x : score) z += (x = std::exp(x - mx));
        for (std::size_t j = 0; j < s; ++j)
          for (std::size_t t = 0; t < hd; ++t) ctx[i * d + h * hd + t] += score[j] / z * v[j * d + h * hd + t];
      }
    }
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < d; ++j)
        for (std::size_t t = 0; t < d; ++t) out[(g * m + i) * d + j] += ctx[i * d + t] * wo[t * d + j];
  }
  return out;
}

// Indices of the k largest entries of each row via a full stable sort.
inline std::vector<std::size_t> top_k_by_sort(const Vec& scores, std::size_t rows, std::size_t p, std::size_t k) {
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<std::size_t> idx(p);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return scores[r * p + a] > scores[r * p + b]; });
    out.insert(out.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
  }
  return out;
}

// Overlap-normalized autocovariance over the population variance.
inline double lag_score(const Vec& x, std::size_t lag) {
  const double n = static_cast<double>(x.size());
  double mu = 0.0;
  for (double v : x) mu += v;
  mu /= n;
  double var = 0.0;
  for (double v : x) var += (v - mu) * (v - mu);
  var /= n;
  if (var == 0.0) return 0.0;
  double c = 0.0;
  for (std::size_t t = 0; t + lag < x.size(); ++t) c += (x[t] - mu) * (x[t + lag] - mu);
  return c / static_cast<double>(x.size() - lag) / var;
}

}  // namespace oracle
