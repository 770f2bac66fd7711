#include "timeprompt/prompting.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "timeprompt/random.hpp"

namespace timeprompt {

namespace {

std::string fixed(double value, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, value);
  std::string s(buf);
  // "-0.0000" reads as noise in a prompt; print it as zero.
  if (s.front() == '-' && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);
  return s;
}

}  // namespace

const char* trend_name(Trend trend) {
  switch (trend) {
    case Trend::kIncreasing: return "increasing";
    case Trend::kDecreasing: return "decreasing";
    case Trend::kFlat: return "flat";
  }
  return "?";
}

double lag_autocorrelation(std::span<const double> values, std::size_t lag) {
  const std::size_t n = values.size();
  if (lag == 0 || lag >= n) throw std::invalid_argument("lag_autocorrelation: lag out of range");
  const double mu = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (double v : values) var += (v - mu) * (v - mu);
  var /= static_cast<double>(n);
  if (!(var > 0.0)) return 0.0;
  double cov = 0.0;
  for (std::size_t t = 0; t + lag < n; ++t) cov += (values[t] - mu) * (values[t + lag] - mu);
  cov /= static_cast<double>(n - lag);
  return cov / var;
}

StatSummary compute_statistics(std::span<const double> lookback, const StatOptions& options) {
  const std::size_t n = lookback.size();
  if (n < 2) throw std::invalid_argument("compute_statistics: look-back window needs at least 2 values");
  StatSummary s;
  s.min = *std::min_element(lookback.begin(), lookback.end());
  s.max = *std::max_element(lookback.begin(), lookback.end());
  s.mean = std::accumulate(lookback.begin(), lookback.end(), 0.0) / static_cast<double>(n);
  double sq = 0.0;
  for (double v : lookback) sq += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(sq / static_cast<double>(n));

  std::vector<double> sorted(lookback.begin(), lookback.end());
  std::sort(sorted.begin(), sorted.end());
  s.median = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);

  const double t_mean = static_cast<double>(n - 1) / 2.0;
  double num = 0.0;
  double den = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const double dt = static_cast<double>(t) - t_mean;
    num += dt * (lookback[t] - s.mean);
    den += dt * dt;
  }
  s.slope = num / den;
  if (std::abs(s.slope) < options.flat_threshold) {
    s.trend = Trend::kFlat;
  } else {
    s.trend = s.slope > 0.0 ? Trend::kIncreasing : Trend::kDecreasing;
  }

  const std::size_t max_lag = n / 2;
  struct Scored {
    long long key;
    std::size_t lag;
  };
  std::vector<Scored> lags;
  for (std::size_t lag = 1; lag <= max_lag; ++lag) {
    lags.push_back({std::llround(lag_autocorrelation(lookback, lag) * 1e9), lag});
  }
  const std::size_t keep = std::min(options.lag_count, lags.size());
  std::partial_sort(lags.begin(), lags.begin() + static_cast<std::ptrdiff_t>(keep), lags.end(),
                    [](const Scored& a, const Scored& b) { return a.key != b.key ? a.key > b.key : a.lag < b.lag; });
  for (std::size_t i = 0; i < keep; ++i) s.top_lags.push_back(lags[i].lag);
  return s;
}

std::string render_hard_prompt(const StatSummary& stats, std::span<const double> lookback,
                               const PromptMeta& meta) {
  std::string text;
  text += "Instruction: Forecast the next " + std::to_string(meta.horizon) + " steps of variable " +
          meta.variable + " in the " + meta.dataset + " dataset given the previous " +
          std::to_string(lookback.size()) + " observations.\n";
  text += "Statistical Characteristics: min: " + fixed(stats.min, 4) + ", max: " + fixed(stats.max, 4) +
          ", mean: " + fixed(stats.mean, 4) + ", std: " + fixed(stats.std, 4) +
          ", median: " + fixed(stats.median, 4) + ", trend: " + trend_name(stats.trend) +
          " (slope " + fixed(stats.slope, 4) + "), top lags: ";
  for (std::size_t i = 0; i < stats.top_lags.size(); ++i) {
    text += (i ? ", " : "") + std::to_string(stats.top_lags[i]);
  }
  text += ".\nHistorical Data: ";
  for (std::size_t i = 0; i < lookback.size(); ++i) {
    if (i) text += ',';
    text += fixed(lookback[i], 3);
  }
  return text;
}

Tokenizer::Tokenizer(std::size_t dim, std::uint64_t seed) : dim_(dim) {
  if (dim == 0) throw std::invalid_argument("tokenizer: embedding dimension must be positive");
  Rng rng(seed);
  table_ = Tensor::constant({kVocabSize, dim}, rng.normal_vector(kVocabSize * dim, 0.0, 0.5));
}

std::vector<std::size_t> Tokenizer::encode(std::string_view text) const {
  std::vector<std::size_t> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(c);
  return ids;
}

std::string Tokenizer::decode(std::span<const std::size_t> ids) const {
  std::string text;
  for (std::size_t id : ids) {
    if (id >= kVocabSize) throw std::out_of_range("tokenizer: id " + std::to_string(id) + " outside vocabulary");
    if (id < 256) text.push_back(static_cast<char>(id));
  }
  return text;
}

Tensor Tokenizer::embed(std::span<const std::size_t> ids) const {
  NoGradGuard no_grad;
  return gather_rows(table_, ids);
}

Tensor embed_hard_prompt(std::string_view text, const Tokenizer& tok) {
  if (text.empty()) throw std::invalid_argument("embed_hard_prompt: empty prompt text");
  const auto ids = tok.encode(text);
  return tok.embed(ids);
}

Tensor truncate_prompt_tokens(const Tensor& embedding, std::size_t retained, const Tensor& pad_row) {
  if (retained == 0) throw std::invalid_argument("truncate_prompt_tokens: retained count must be >= 1");
  if (embedding.rank() != 2) throw DimensionError("truncate_prompt_tokens: expected [L, D] embedding");
  const std::size_t rows = embedding.dim(0);
  const std::size_t d = embedding.dim(1);
  if (rows >= retained) return slice(embedding, 0, rows - retained, rows);
  if (pad_row.size() != d) throw DimensionError("truncate_prompt_tokens: pad row width mismatch");
  std::vector<Tensor> parts(retained - rows, reshape(pad_row, {1, d}));
  if (rows > 0) parts.push_back(embedding);
  return concat(parts, 0);
}

std::vector<std::size_t> truncate_token_ids(std::span<const std::size_t> ids, std::size_t retained) {
  if (retained == 0) throw std::invalid_argument("truncate_token_ids: retained count must be >= 1");
  std::vector<std::size_t> out;
  out.reserve(retained);
  if (ids.size() >= retained) {
    out.assign(ids.end() - static_cast<std::ptrdiff_t>(retained), ids.end());
  } else {
    out.assign(retained - ids.size(), Tokenizer::kPad);
    out.insert(out.end(), ids.begin(), ids.end());
  }
  return out;
}

HardPromptArtifact build_hard_prompt(std::span<const double> lookback, const PromptMeta& meta,
                                     const Tokenizer& tok, std::size_t retained,
                                     const StatOptions& options) {
  HardPromptArtifact art;
  art.stats = compute_statistics(lookback, options);
  art.text = render_hard_prompt(art.stats, lookback, meta);
  art.token_ids = tok.encode(art.text);
  art.retained_ids = truncate_token_ids(art.token_ids, retained);
  return art;
}

// ---------------------------------------------------------------------------

PromptPool::PromptPool(const PromptPoolConfig& cfg, std::size_t d, std::uint64_t seed)
    : config(cfg), dim(d) {
  if (cfg.pool_size == 0 || cfg.soft_len == 0 || d == 0) {
    throw std::invalid_argument("prompt pool: pool size, soft length and dimension must be positive");
  }
  if (cfg.top_k == 0 || cfg.top_k > cfg.pool_size) {
    throw std::invalid_argument("prompt pool: top_k must lie in [1, pool_size]");
  }
  Rng rng(seed);
  const double bound = 0.5 / std::sqrt(static_cast<double>(d));
  keys = Tensor::parameter({cfg.pool_size, d}, rng.uniform_vector(cfg.pool_size * d, -bound, bound));
  values = Tensor::parameter({cfg.pool_size, cfg.soft_len, d},
                             rng.uniform_vector(cfg.pool_size * cfg.soft_len * d, -bound, bound));
}

Tensor pool_patches(const Tensor& patches) {
  if (patches.rank() < 2) throw DimensionError("pool_patches: expected [..., M, D]");
  if (patches.dim(patches.rank() - 2) == 0) throw DimensionError("pool_patches: no patches");
  return mean(patches, patches.rank() - 2);
}

Tensor compute_similarity(const Tensor& pooled, const Tensor& keys) {
  if (keys.rank() != 2 || pooled.rank() < 1 || pooled.shape().back() != keys.dim(1)) {
    throw DimensionError("compute_similarity: " + shape_str(pooled.shape()) + " vs keys " +
                         shape_str(keys.shape()));
  }
  Shape lead(pooled.shape().begin(), pooled.shape().end() - 1);
  const std::size_t rows = numel(lead);
  Tensor flat = reshape(pooled, {rows, keys.dim(1)});
  Tensor scores = matmul(flat, transpose(keys, 0, 1));
  lead.push_back(keys.dim(0));
  return reshape(scores, lead);
}

TopKIndices select_top_k(const Tensor& scores, std::size_t k) {
  if (scores.rank() < 1) throw DimensionError("select_top_k: scalar scores");
  const std::size_t p = scores.shape().back();
  if (k == 0 || k > p) {
    throw std::invalid_argument("select_top_k: k=" + std::to_string(k) + " must lie in [1, " +
                                std::to_string(p) + "]");
  }
  const std::size_t rows = scores.size() / p;
  TopKIndices out;
  out.shape.assign(scores.shape().begin(), scores.shape().end() - 1);
  out.shape.push_back(k);
  out.index.resize(rows * k);
  const auto s = scores.data();
#pragma omp parallel for schedule(static) if (rows * p > 65536)
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rows); ++r) {
    const double* row = s.data() + static_cast<std::size_t>(r) * p;
    std::vector<std::size_t> order(p);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [row](std::size_t a, std::size_t b) { return row[a] != row[b] ? row[a] > row[b] : a < b; });
    std::copy_n(order.begin(), k, out.index.begin() + r * static_cast<std::ptrdiff_t>(k));
  }
  return out;
}

Tensor gather_prompts(const Tensor& values, const TopKIndices& indices) {
  if (values.rank() != 3) throw DimensionError("gather_prompts: values must be [P, L, D]");
  const std::size_t len = values.dim(1);
  const std::size_t d = values.dim(2);
  Tensor picked = gather_rows(values, indices.index);
  Shape out(indices.shape.begin(), indices.shape.end() - 1);
  out.push_back(indices.shape.back() * len);
  out.push_back(d);
  return reshape(picked, out);
}

Tensor gather_scores(const Tensor& scores, const TopKIndices& indices) {
  const std::size_t p = scores.shape().back();
  const std::size_t k = indices.shape.back();
  std::vector<std::size_t> flat(indices.index.size());
  for (std::size_t i = 0; i < flat.size(); ++i) flat[i] = (i / k) * p + indices.index[i];
  return reshape(gather_rows(reshape(scores, {scores.size()}), flat), indices.shape);
}

}  // namespace timeprompt
