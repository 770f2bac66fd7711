#pragma once

// Soft-prompt pool retrieval and statistical hard prompts.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "timeprompt/tensor.hpp"

namespace timeprompt {

// ---------------------------------------------------------------------------
// Hard prompts

enum class Trend { kIncreasing, kDecreasing, kFlat };
const char* trend_name(Trend trend);

struct StatSummary {
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
  double std = 0.0;  // population
  double median = 0.0;
  double slope = 0.0;  // least squares, value per step
  Trend trend = Trend::kFlat;
  std::vector<std::size_t> top_lags;
};

struct StatOptions {
  std::size_t lag_count = 5;
  double flat_threshold = 1e-3;
};

// Lag score used to rank top_lags: overlap-normalized autocorrelation
// (1/(T-l)) sum (x_t - mu)(x_{t+l} - mu) divided by the population variance.
// Zero for a constant window.
double lag_autocorrelation(std::span<const double> values, std::size_t lag);

// Lags in [1, T/2] ordered by descending autocorrelation; scores equal to
// within 1e-9 tie and the shorter lag wins.
StatSummary compute_statistics(std::span<const double> lookback, const StatOptions& options = {});

struct PromptMeta {
  std::string dataset = "synthetic";
  std::string variable = "x";
  std::size_t horizon = 96;
};

std::string render_hard_prompt(const StatSummary& stats, std::span<const double> lookback,
                               const PromptMeta& meta);

// Byte-level tokenizer: ids 0..255 are raw bytes, followed by four specials.
// Owns the frozen embedding table.
class Tokenizer {
 public:
  static constexpr std::size_t kPad = 256;
  static constexpr std::size_t kBos = 257;
  static constexpr std::size_t kEos = 258;
  static constexpr std::size_t kUnk = 259;
  static constexpr std::size_t kVocabSize = 260;

  Tokenizer(std::size_t dim, std::uint64_t seed);

  std::vector<std::size_t> encode(std::string_view text) const;
  // Specials are dropped; ids past the vocabulary raise.
  std::string decode(std::span<const std::size_t> ids) const;

  std::size_t dim() const { return dim_; }
  // V x D, never trainable.
  const Tensor& table() const { return table_; }
  Tensor& mutable_table() { return table_; }
  Tensor embed(std::span<const std::size_t> ids) const;

 private:
  std::size_t dim_;
  Tensor table_;
};

Tensor embed_hard_prompt(std::string_view text, const Tokenizer& tok);

// Keeps the last `retained` rows; missing leading rows become `pad_row`.
Tensor truncate_prompt_tokens(const Tensor& embedding, std::size_t retained, const Tensor& pad_row);

// Id-level twin of truncate_prompt_tokens, used when batching.
std::vector<std::size_t> truncate_token_ids(std::span<const std::size_t> ids, std::size_t retained);

struct HardPromptArtifact {
  StatSummary stats;
  std::string text;
  std::vector<std::size_t> token_ids;     // full encoding
  std::vector<std::size_t> retained_ids;  // after truncation, length == retained
};

HardPromptArtifact build_hard_prompt(std::span<const double> lookback, const PromptMeta& meta,
                                     const Tokenizer& tok, std::size_t retained,
                                     const StatOptions& options = {});

// ---------------------------------------------------------------------------
// Soft prompts

struct PromptPoolConfig {
  std::size_t pool_size = 100;
  std::size_t soft_len = 5;
  std::size_t top_k = 5;
  double key_surrogate_weight = 0.01;
};

// Keys P x D and values P x L x D, both trainable, uniform init on
// [-0.5/sqrt(D), 0.5/sqrt(D)].
struct PromptPool {
  PromptPool() = default;
  PromptPool(const PromptPoolConfig& cfg, std::size_t dim, std::uint64_t seed);

  PromptPoolConfig config;
  std::size_t dim = 0;
  Tensor keys;
  Tensor values;
};

struct TopKIndices {
  Shape shape;  // leading axes of the score tensor, then k
  std::vector<std::size_t> index;
};

// X_hat [..., M, D] -> [..., D]
Tensor pool_patches(const Tensor& patches);
// X_bar [..., D], K [P, D] -> [..., P]
Tensor compute_similarity(const Tensor& pooled, const Tensor& keys);
// Descending score order; ties go to the lower index.
TopKIndices select_top_k(const Tensor& scores, std::size_t k);
// V [P, L, D] gathered by I [..., k] -> [..., k*L, D]
Tensor gather_prompts(const Tensor& values, const TopKIndices& indices);
// Scores picked out by the indices, shape [..., k].
Tensor gather_scores(const Tensor& scores, const TopKIndices& indices);

}  // namespace timeprompt
