#pragma once

// The assembled forecaster: patches -> reprogramming -> prompt alignment ->
// gated fusion -> frozen backbone with adapters -> projection head.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "timeprompt/backbone.hpp"
#include "timeprompt/data.hpp"
#include "timeprompt/fusion.hpp"
#include "timeprompt/head.hpp"
#include "timeprompt/prompting.hpp"

namespace timeprompt {

struct AblationFlags {
  bool no_sp = false;    // soft prompt path
  bool no_hp = false;    // hard prompt path
  bool no_cma = false;   // alignment + gated fusion; backbone sees X_tilde
  bool no_lora = false;  // adapters

  std::string label() const;
};

struct ModelConfig {
  std::size_t lookback = 96;
  std::size_t horizon = 96;
  std::size_t dim = 64;
  std::size_t fusion_heads = 4;
  PatchConfig patch;
  PromptPoolConfig pool;
  std::size_t hard_len = 5;
  StatOptions stats;
  std::size_t backbone_layers = 2;
  std::size_t backbone_heads = 4;
  std::size_t ffn_mult = 4;
  LoraConfig lora;
  std::size_t head_dim = 32;
  AblationFlags ablate;
  // Trainable initialization; the experiment seed.
  std::uint64_t seed = 2021;
  // Stand-in "pretrained" weights (backbone and vocabulary table), shared by
  // every experiment seed.
  std::uint64_t backbone_seed = 1234;
};

// One mini-batch: B windows x N variables.
struct Batch {
  Tensor series;                     // [B, N, T]
  Tensor target;                     // [B, N, H]
  std::vector<std::size_t> hard_ids;  // B * N * hard_len retained token ids
  std::vector<std::size_t> origins;
  std::size_t windows = 0;
  std::size_t vars = 0;
};

// Windows with their hard prompts resolved once; prompts depend only on the
// look-back rows.
struct PreparedSet {
  std::vector<TimeWindow> windows;
  std::vector<std::vector<std::size_t>> hard_ids;  // per window: N * hard_len
  std::vector<std::string> variable_names;

  std::size_t size() const { return windows.size(); }
};

struct ForwardOutput {
  Tensor prediction;      // [B, N, H]
  Tensor surrogate;       // key surrogate loss, undefined without the soft path
  Tensor patches;         // X_hat
  Tensor reprogrammed;    // X_tilde
  Tensor backbone_input;  // Z, [B*N, M, D]
  Tensor soft_prompt;     // [B, N, k*L, D] when active
  Tensor hard_prompt;     // [B, N, L_h, D] when active
  TopKIndices selected;
};

class TimePromptModel {
 public:
  TimePromptModel() = default;
  explicit TimePromptModel(const ModelConfig& cfg);

  ForwardOutput forward(const Batch& batch, Rng* rng = nullptr) const;

  // Prediction loss plus the weighted key surrogate.
  Tensor training_loss(const ForwardOutput& out, const Batch& batch) const;

  void set_training(bool training);
  bool training() const { return training_; }

  const ModelConfig& config() const { return cfg_; }
  std::size_t num_patches() const { return patch_.num_patches(); }

  // Every tensor the optimizer updates, by stable name. Ablated paths and
  // frozen tensors are absent.
  std::vector<NamedTensor> trainable_parameters() const;
  // Backbone base weights and the tokenizer table.
  std::vector<NamedTensor> frozen_parameters() const;

  const Tokenizer& tokenizer() const { return tokenizer_; }
  Tokenizer& tokenizer() { return tokenizer_; }
  Backbone& backbone() { return backbone_; }
  const Backbone& backbone() const { return backbone_; }
  const PatchEmbedding& patch_embedding() const { return patch_; }
  const MultiHeadCrossAttention& reprogrammer() const { return reprogram_; }
  const MultiHeadCrossAttention& soft_aligner() const { return align_soft_; }
  const MultiHeadCrossAttention& hard_aligner() const { return align_hard_; }
  const PromptPool& pool() const { return pool_; }
  const GateFusion& gate() const { return gate_; }
  const ForecastHead& head() const { return head_; }

  bool soft_active() const { return !cfg_.ablate.no_cma && !cfg_.ablate.no_sp; }
  bool hard_active() const { return !cfg_.ablate.no_cma && !cfg_.ablate.no_hp; }

 private:
  ModelConfig cfg_;
  Tokenizer tokenizer_{1, 0};
  PatchEmbedding patch_;
  MultiHeadCrossAttention reprogram_;
  PromptPool pool_;
  MultiHeadCrossAttention align_soft_;
  MultiHeadCrossAttention align_hard_;
  GateFusion gate_;
  Backbone backbone_;
  ForecastHead head_;
  bool training_ = false;
};

PreparedSet prepare_windows(std::vector<TimeWindow> windows, const std::vector<std::string>& variable_names,
                            const std::string& dataset, const ModelConfig& cfg, const Tokenizer& tok);

Batch make_batch(const PreparedSet& set, std::span<const std::size_t> indices, std::size_t hard_len);

}  // namespace timeprompt
