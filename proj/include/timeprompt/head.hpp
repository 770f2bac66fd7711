#pragma once

// Local/global projection head and forecast losses.

#include <cstddef>
#include <cstdint>
#include <span>

#include "timeprompt/tensor.hpp"

namespace timeprompt {

// H_out [B, N, M, D] -> Y_hat [B, N, H] in one pass:
//   local_m = H_out_m Wl + bl                      (d per token)
//   global  = mean_m local_m
//   fused_m = [local_m, global] Wf + bf
//   Y_hat   = flatten(fused) Wo + bo
class ForecastHead {
 public:
  ForecastHead() = default;
  ForecastHead(std::size_t dim, std::size_t head_dim, std::size_t num_patches, std::size_t horizon,
               std::uint64_t seed);

  Tensor forward(const Tensor& hidden) const;

  std::size_t head_dim() const { return head_dim_; }
  std::size_t horizon() const { return horizon_; }

  Tensor local_weight, local_bias;  // [D, d], [d]
  Tensor fuse_weight, fuse_bias;    // [2d, d], [d]
  Tensor out_weight, out_bias;      // [M*d, H], [H]

 private:
  std::size_t head_dim_ = 0;
  std::size_t num_patches_ = 0;
  std::size_t horizon_ = 0;
};

inline Tensor project_forecast(const ForecastHead& head, const Tensor& hidden) { return head.forward(hidden); }

// Mean squared error over every entry; shapes must match.
Tensor mse_loss(const Tensor& prediction, const Tensor& target);

struct Metrics {
  double mse = 0.0;
  double mae = 0.0;
  std::size_t count = 0;
};

Metrics compute_metrics(std::span<const double> prediction, std::span<const double> target);

}  // namespace timeprompt
