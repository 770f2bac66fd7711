#include "timeprompt/head.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "timeprompt/random.hpp"

namespace timeprompt {

ForecastHead::ForecastHead(std::size_t dim, std::size_t head_dim, std::size_t num_patches, std::size_t horizon,
                           std::uint64_t seed)
    : head_dim_(head_dim), num_patches_(num_patches), horizon_(horizon) {
  if (dim == 0 || head_dim == 0 || num_patches == 0 || horizon == 0) {
    throw std::invalid_argument("forecast head: all sizes must be positive");
  }
  Rng rng(seed);
  auto weight = [&](std::size_t in, std::size_t out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    return Tensor::parameter({in, out}, rng.uniform_vector(in * out, -bound, bound));
  };
  auto zeros = [](std::size_t n) { return Tensor::parameter({n}, std::vector<double>(n, 0.0)); };
  local_weight = weight(dim, head_dim);
  local_bias = zeros(head_dim);
  fuse_weight = weight(2 * head_dim, head_dim);
  fuse_bias = zeros(head_dim);
  out_weight = weight(num_patches * head_dim, horizon);
  out_bias = zeros(horizon);
}

Tensor ForecastHead::forward(const Tensor& hidden) const {
  if (hidden.rank() != 4 || hidden.dim(2) != num_patches_ || hidden.dim(3) != local_weight.dim(0)) {
    throw DimensionError("forecast head: unexpected input " + shape_str(hidden.shape()));
  }
  const std::size_t b = hidden.dim(0);
  const std::size_t n = hidden.dim(1);
  const std::size_t m = num_patches_;
  const std::size_t d = head_dim_;
  Tensor local = add(matmul(hidden, local_weight), local_bias);  // [B, N, M, d]
  Tensor global = reshape(mean(local, 2), {b, n, 1, d});
  Tensor broadcast = m == 1 ? global : concat(std::vector<Tensor>(m, global), 2);
  Tensor fused = add(matmul(concat({local, broadcast}, 3), fuse_weight), fuse_bias);
  return add(matmul(reshape(fused, {b, n, m * d}), out_weight), out_bias);
}

Tensor mse_loss(const Tensor& prediction, const Tensor& target) {
  if (prediction.shape() != target.shape()) {
    throw DimensionError("mse_loss: prediction " + shape_str(prediction.shape()) + " vs target " +
                         shape_str(target.shape()));
  }
  Tensor diff = sub(prediction, target);
  return mean_all(mul(diff, diff));
}

Metrics compute_metrics(std::span<const double> prediction, std::span<const double> target) {
  if (prediction.size() != target.size()) throw DimensionError("metrics: prediction/target length mismatch");
  if (prediction.empty()) throw std::invalid_argument("metrics: nothing to score");
  Metrics m;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const double e = prediction[i] - target[i];
    m.mse += e * e;
    m.mae += std::abs(e);
  }
  m.count = prediction.size();
  m.mse /= static_cast<double>(m.count);
  m.mae /= static_cast<double>(m.count);
  return m;
}

}  // namespace timeprompt
