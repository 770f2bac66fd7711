#include "timeprompt/fusion.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "timeprompt/random.hpp"

namespace timeprompt {

std::size_t PatchConfig::num_patches(std::size_t lookback) const {
  if (patch_len == 0 || stride == 0) throw std::invalid_argument("patch length and stride must be positive");
  if (lookback < patch_len) {
    throw DimensionError("look-back length " + std::to_string(lookback) + " is shorter than patch length " +
                         std::to_string(patch_len));
  }
  return (lookback - patch_len) / stride + 1;
}

PatchEmbedding::PatchEmbedding(const PatchConfig& cfg, std::size_t lookback, std::size_t dim,
                               std::uint64_t seed)
    : cfg_(cfg), lookback_(lookback), num_patches_(cfg.num_patches(lookback)) {
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.patch_len));
  weight = Tensor::parameter({cfg.patch_len, dim}, rng.uniform_vector(cfg.patch_len * dim, -bound, bound));
  bias = Tensor::parameter({dim}, std::vector<double>(dim, 0.0));
  position = Tensor::parameter({num_patches_, dim}, rng.normal_vector(num_patches_ * dim, 0.0, 0.02));
}

Tensor PatchEmbedding::forward(const Tensor& series) const {
  if (series.rank() != 3) throw DimensionError("patchify_embed: expected [B, N, T], got " + shape_str(series.shape()));
  const std::size_t t = series.dim(2);
  if (t != lookback_) {
    throw DimensionError("patchify_embed: look-back " + std::to_string(t) + " does not match configured " +
                         std::to_string(lookback_));
  }
  const std::size_t seqs = series.dim(0) * series.dim(1);
  const std::size_t m = num_patches_;
  const std::size_t p = cfg_.patch_len;
  std::vector<std::size_t> idx;
  idx.reserve(seqs * m * p);
  for (std::size_t s = 0; s < seqs; ++s) {
    for (std::size_t patch = 0; patch < m; ++patch) {
      for (std::size_t j = 0; j < p; ++j) idx.push_back(s * t + patch * cfg_.stride + j);
    }
  }
  Tensor patches = reshape(gather_rows(reshape(series, {series.size()}), idx),
                           {series.dim(0), series.dim(1), m, p});
  return add(add(matmul(patches, weight), bias), position);
}

MultiHeadCrossAttention::MultiHeadCrossAttention(std::size_t dim, std::size_t heads, std::uint64_t seed)
    : dim_(dim), heads_(heads) {
  if (heads == 0 || dim % heads != 0) {
    throw std::invalid_argument("attention: dimension " + std::to_string(dim) + " not divisible by " +
                                std::to_string(heads) + " heads");
  }
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  auto make = [&]() { return Tensor::parameter({dim, dim}, rng.uniform_vector(dim * dim, -bound, bound)); };
  w_query = make();
  w_key = make();
  w_value = make();
  w_out = make();
}

AttentionResult MultiHeadCrossAttention::attend(const Tensor& query, const Tensor& source) const {
  if (query.rank() < 2 || query.shape().back() != dim_) {
    throw DimensionError("attention: query " + shape_str(query.shape()) + " does not end in D=" + std::to_string(dim_));
  }
  if (source.rank() < 2 || source.shape().back() != dim_) {
    throw DimensionError("attention: source " + shape_str(source.shape()) + " does not end in D=" + std::to_string(dim_));
  }
  const Shape lead(query.shape().begin(), query.shape().end() - 2);
  const std::size_t g = numel(lead);
  const std::size_t m = query.dim(query.rank() - 2);
  const std::size_t s = source.dim(source.rank() - 2);
  if (s == 0) throw DimensionError("attention: source has no tokens");
  const std::size_t h = heads_;
  const std::size_t hd = dim_ / h;

  Tensor q = matmul(reshape(query, {g, m, dim_}), w_query);
  q = transpose(reshape(q, {g, m, h, hd}), 1, 2);  // [G, h, M, hd]

  Tensor k_t;
  Tensor v;
  if (source.rank() == 2) {
    Tensor k = transpose(reshape(matmul(source, w_key), {s, h, hd}), 0, 1);  // [h, S, hd]
    k_t = transpose(k, 1, 2);                                                 // [h, hd, S]
    v = transpose(reshape(matmul(source, w_value), {s, h, hd}), 0, 1);        // [h, S, hd]
  } else {
    const Shape src_lead(source.shape().begin(), source.shape().end() - 2);
    if (src_lead != lead) {
      throw DimensionError("attention: source " + shape_str(source.shape()) + " does not match query " +
                           shape_str(query.shape()));
    }
    Tensor flat = reshape(source, {g, s, dim_});
    Tensor k = transpose(reshape(matmul(flat, w_key), {g, s, h, hd}), 1, 2);  // [G, h, S, hd]
    k_t = transpose(k, 2, 3);
    v = transpose(reshape(matmul(flat, w_value), {g, s, h, hd}), 1, 2);
  }
  Tensor scores = scale(matmul(q, k_t), 1.0 / std::sqrt(static_cast<double>(hd)));
  Tensor weights = softmax(scores, 3);
  Tensor ctx = transpose(matmul(weights, v), 1, 2);  // [G, M, h, hd]
  Tensor out = matmul(reshape(ctx, {g, m, dim_}), w_out);
  return {reshape(out, query.shape()), weights};
}

Tensor reprogram(const Tensor& patches, const Tensor& vocabulary, const MultiHeadCrossAttention& attn) {
  if (vocabulary.rank() != 2) throw DimensionError("reprogram: vocabulary must be [V, D]");
  return attn.forward(patches, vocabulary);
}

std::pair<Tensor, Tensor> align(const Tensor& series_tokens, const Tensor& soft_prompt,
                                const Tensor& hard_prompt, const MultiHeadCrossAttention& soft_attn,
                                const MultiHeadCrossAttention& hard_attn) {
  for (const Tensor* p : {&soft_prompt, &hard_prompt}) {
    if (p->rank() < 2 || p->dim(p->rank() - 2) == 0) throw DimensionError("align: prompt has no tokens");
  }
  return {soft_attn.forward(series_tokens, soft_prompt), hard_attn.forward(series_tokens, hard_prompt)};
}

Tensor active_gates(const GateFusion& gates, bool soft_active, bool hard_active) {
  if (soft_active && hard_active) return gates.gates();
  std::vector<std::size_t> idx{0};
  if (soft_active) idx.push_back(1);
  if (hard_active) idx.push_back(2);
  return softmax(gather_rows(gates.logits, idx), 0);
}

Tensor fuse(const Tensor& series_tokens, const Tensor& z_soft, const Tensor& z_hard, const GateFusion& gates) {
  for (const Tensor* z : {&z_soft, &z_hard}) {
    if (z->defined() && z->shape() != series_tokens.shape()) {
      throw DimensionError("fuse: shape " + shape_str(z->shape()) + " does not match series tokens " +
                           shape_str(series_tokens.shape()));
    }
  }
  if (!z_soft.defined() && !z_hard.defined()) return series_tokens;
  const Tensor g = active_gates(gates, z_soft.defined(), z_hard.defined());
  Tensor z = series_tokens;
  std::size_t slot = 1;
  for (const Tensor* path : {&z_soft, &z_hard}) {
    if (!path->defined()) continue;
    z = add(z, mul(sub(*path, series_tokens), slice(g, 0, slot, slot + 1)));
    ++slot;
  }
  return z;
}

}  // namespace timeprompt
