#pragma once

// Patch embedding, vocabulary reprogramming, prompt alignment and gated fusion.

#include <cstddef>
#include <cstdint>
#include <utility>

#include "timeprompt/tensor.hpp"

namespace timeprompt {

struct PatchConfig {
  std::size_t patch_len = 16;
  std::size_t stride = 8;

  // floor((T - patch_len) / stride) + 1
  std::size_t num_patches(std::size_t lookback) const;
};

// x [B, N, T] -> X_hat [B, N, M, D]: each patch projected linearly, plus a
// learned vector per patch position.
class PatchEmbedding {
 public:
  PatchEmbedding() = default;
  PatchEmbedding(const PatchConfig& cfg, std::size_t lookback, std::size_t dim, std::uint64_t seed);

  Tensor forward(const Tensor& series) const;

  const PatchConfig& config() const { return cfg_; }
  std::size_t num_patches() const { return num_patches_; }

  Tensor weight;    // [patch_len, D]
  Tensor bias;      // [D]
  Tensor position;  // [M, D]

 private:
  PatchConfig cfg_;
  std::size_t lookback_ = 0;
  std::size_t num_patches_ = 0;
};

struct AttentionResult {
  Tensor output;   // same shape as the query
  Tensor weights;  // [G, heads, M, S]
};

// Multi-head cross-attention with trainable D x D maps (row convention,
// y = x W) and no biases.
class MultiHeadCrossAttention {
 public:
  MultiHeadCrossAttention() = default;
  MultiHeadCrossAttention(std::size_t dim, std::size_t heads, std::uint64_t seed);

  // query [..., M, D]; source either [S, D] shared by every query sequence, or
  // [..., S, D] with the query's leading axes.
  AttentionResult attend(const Tensor& query, const Tensor& source) const;
  Tensor forward(const Tensor& query, const Tensor& source) const { return attend(query, source).output; }

  std::size_t dim() const { return dim_; }
  std::size_t heads() const { return heads_; }

  Tensor w_query;
  Tensor w_key;
  Tensor w_value;
  Tensor w_out;

 private:
  std::size_t dim_ = 0;
  std::size_t heads_ = 1;
};

// X_tilde = MHCA(X_hat W^Q, E W^K, E W^V)
Tensor reprogram(const Tensor& patches, const Tensor& vocabulary, const MultiHeadCrossAttention& attn);

// (Z1, Z2): series tokens attending to the soft and hard prompt tokens.
std::pair<Tensor, Tensor> align(const Tensor& series_tokens, const Tensor& soft_prompt,
                                const Tensor& hard_prompt, const MultiHeadCrossAttention& soft_attn,
                                const MultiHeadCrossAttention& hard_attn);

// Three scalar logits; gates = softmax over the active paths.
struct GateFusion {
  GateFusion() : logits(Tensor::parameter({3}, {0.0, 0.0, 0.0})) {}
  explicit GateFusion(Tensor l) : logits(std::move(l)) {}

  Tensor gates() const { return softmax(logits, 0); }

  Tensor logits;
};

// Z = g0 X_tilde + g1 Z1 + g2 Z2, evaluated as X_tilde + g1 (Z1 - X_tilde) +
// g2 (Z2 - X_tilde). An undefined Z1 or Z2 drops that path and the gates are
// renormalized over the rest.
Tensor fuse(const Tensor& series_tokens, const Tensor& z_soft, const Tensor& z_hard, const GateFusion& gates);

// Gate values over the active paths, in path order (X_tilde first).
Tensor active_gates(const GateFusion& gates, bool soft_active, bool hard_active);

}  // namespace timeprompt
