#pragma once

// Optimization: Adam, one-cycle schedule, early stopping, evaluation.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "timeprompt/model.hpp"

namespace timeprompt {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double lr_max = 1e-4;
  std::size_t batch = 32;
  std::size_t epochs = 10;
  std::size_t patience = 3;
  double pct_start = 0.3;
  double div_factor = 25.0;
  double final_div = 1e4;
  double clip_norm = 1.0;  // <= 0 disables clipping
  std::string early_stop_metric = "mse";
  std::uint64_t seed = 2021;
};

// Cosine one-cycle schedule. With peak = pct_start * total_steps:
//   step <= peak:  lr = cos_anneal(lr_max / div, lr_max, step / peak)
//   step >  peak:  lr = cos_anneal(lr_max, lr_max / final_div,
//                                  (step - peak) / (total_steps - 1 - peak))
// where cos_anneal(a, b, p) = b + (a - b) (1 + cos(pi p)) / 2.
double onecycle_lr(std::size_t step, std::size_t total_steps, const TrainConfig& cfg);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<NamedTensor> params, AdamConfig cfg = {});

  // Bias-corrected update, then clears every gradient. A trainable parameter
  // without a gradient is a wiring error.
  void step(double lr);

  std::size_t steps() const { return steps_; }
  const std::vector<NamedTensor>& parameters() const { return params_; }
  const std::vector<double>& first_moment(std::size_t i) const { return m_[i]; }
  const std::vector<double>& second_moment(std::size_t i) const { return v_[i]; }

 private:
  std::vector<NamedTensor> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t steps_ = 0;
};

inline void adam_step(Adam& state, double lr) { state.step(lr); }

// Rescales gradients so their global L2 norm is at most max_norm; returns the
// norm before clipping.
double clip_grad_norm(const std::vector<NamedTensor>& params, double max_norm);

struct TraceRow {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean batch loss
  double val_mse = 0.0;
  double val_mae = 0.0;
};

struct TrainResult {
  std::vector<TraceRow> trace;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val = 0.0;
  bool early_stopped = false;
};

struct TrainHooks {
  std::function<void(std::size_t step, const TimePromptModel& model)> after_step;
};

// Trains in place and leaves the model holding its best-validation weights.
TrainResult train(TimePromptModel& model, const PreparedSet& train_set, const PreparedSet& val_set,
                  const TrainConfig& cfg, const TrainHooks& hooks = {});

struct PredictionRow {
  std::size_t origin = 0;
  std::size_t variable = 0;
  std::size_t step = 0;
  double truth = 0.0;
  double prediction = 0.0;
};

struct EvalResult {
  Metrics metrics;
  std::vector<PredictionRow> predictions;  // filled when requested
};

// Eval-mode forward over the whole set. With a scaler, values are mapped back
// to original units before scoring.
EvalResult evaluate(TimePromptModel& model, const PreparedSet& set, std::size_t batch = 32,
                    const Scaler* denormalize = nullptr, bool keep_predictions = false);

// Repeats the last look-back value over the horizon.
Metrics persistence_metrics(const std::vector<TimeWindow>& windows, const Scaler* denormalize = nullptr);

}  // namespace timeprompt
