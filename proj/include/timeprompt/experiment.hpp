#pragma once

// Experiment grid: config files, per-cell runs, metrics tables, reports.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "timeprompt/train.hpp"

namespace timeprompt {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Sinusoids with a period-`period` cycle, a linear trend and Gaussian noise.
struct SynthConfig {
  std::size_t rows = 2000;
  std::size_t vars = 2;
  double period = 24.0;
  double trend = 0.001;  // slope of variable 0 per step; others alternate sign
  double noise = 0.1;
  std::uint64_t seed = 7;
};

RawSeries make_synthetic(const SynthConfig& cfg);

struct ExperimentSpec {
  std::string data_path;  // empty: generate from `synth`
  std::string dataset = "synthetic";
  SplitRatios split;
  std::size_t lookback = 96;
  std::vector<std::size_t> horizons{96};
  std::size_t stride = 1;
  bool forward_fill = false;
  double few_shot_fraction = 1.0;
  FewShotMode few_shot_mode = FewShotMode::kPrefix;
  std::vector<std::uint64_t> seeds{2021, 2023, 2025};
  SynthConfig synth;
  ModelConfig model;
  TrainConfig train;
  bool denormalize = false;
  std::size_t eval_batch = 32;
  std::string run_id = "run";
};

// `key = value` lines; '#' starts a comment. Later keys win.
std::map<std::string, std::string> parse_config(std::istream& in);
std::map<std::string, std::string> read_config(const std::string& path);

// Applies dotted keys onto `spec`. Unknown keys and malformed values raise
// ConfigError.
void apply_config(ExperimentSpec& spec, const std::map<std::string, std::string>& values);

// Every key with its resolved value, in a fixed order. Feeding the result back
// through parse_config/apply_config reproduces the spec.
std::string render_manifest(const ExperimentSpec& spec);
std::vector<std::string> config_keys();

// Cross-field checks (top_k <= pool_size, patience <= epochs, ...).
void validate_spec(const ExperimentSpec& spec);

struct MetricsRow {
  std::string dataset;
  std::string ablation;
  std::size_t horizon = 0;
  std::uint64_t seed = 0;
  double mse = 0.0;
  double mae = 0.0;
  double persistence_mse = 0.0;
  double persistence_mae = 0.0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
};

struct Aggregate {
  std::string dataset;
  std::string ablation;
  std::size_t horizon = 0;  // 0: averaged over horizons
  std::size_t count = 0;
  double mse_mean = 0.0;
  double mse_std = 0.0;  // population
  double mae_mean = 0.0;
  double mae_std = 0.0;
};

class MetricsTable {
 public:
  void add(MetricsRow row) { rows_.push_back(std::move(row)); }
  const std::vector<MetricsRow>& rows() const { return rows_; }

  // Mean and population std over seeds per (dataset, ablation, horizon), in
  // first-appearance order.
  std::vector<Aggregate> by_horizon() const;
  // Mean over horizons of the per-horizon seed means (and of their stds).
  std::vector<Aggregate> by_ablation() const;

  std::string to_csv() const;
  static MetricsTable from_csv(std::istream& in);

 private:
  std::vector<MetricsRow> rows_;
};

inline constexpr const char* kMetricsHeader =
    "dataset,ablation,horizon,seed,mse,mae,persistence_mse,persistence_mae,best_epoch,epochs_run";

// "0.4361±0.0123"
std::string format_mean_std(double mean, double std, int precision = 4);

struct CellFailure {
  std::string cell;
  std::string message;
};

struct ExperimentResult {
  MetricsTable table;
  std::vector<CellFailure> failures;
  std::string out_dir;
};

struct LoadedData {
  RawSeries raw;
  Scaler scaler;
  WindowSets windows;
};

// Reads (or generates) the series, splits, fits the scaler on train rows and
// builds windows for `horizon`. Few-shot subsampling applies to train only.
LoadedData load_experiment_data(const ExperimentSpec& spec, std::size_t horizon, std::uint64_t seed);

struct CellOutput {
  MetricsRow row;
  TrainResult training;
  EvalResult test;
};

// Trains and tests one (horizon, seed) cell. Writes trace.csv, epochs.csv,
// best.ckpt and preds.csv into `cell_dir` when it is non-empty.
CellOutput run_cell(const ExperimentSpec& spec, std::size_t horizon, std::uint64_t seed,
                    const std::string& cell_dir);

// Every horizon x seed cell for the spec's ablation flags. Failed cells are
// recorded, not thrown. Writes manifest.txt, metrics.csv and summary.txt.
ExperimentResult run_experiment(const ExperimentSpec& spec, const std::string& out_dir);

// full, no_sp, no_hp, no_cma, no_lora.
std::vector<AblationFlags> ablation_suite();
ExperimentResult run_ablation(const ExperimentSpec& spec, const std::string& out_dir);

struct SweepCell {
  std::string factor;  // soft_len, hard_len, pool_size, top_k
  std::size_t value = 0;
};

// One factor at a time around the defaults: 4 factors x 4 values.
std::vector<SweepCell> sweep_grid();
void apply_sweep_cell(ModelConfig& model, const SweepCell& cell);
ExperimentResult run_sweep(const ExperimentSpec& spec, const std::string& out_dir);

// Restores the trainable tensors saved by run_cell; names and shapes must match.
void load_trainable(TimePromptModel& model, const std::vector<NamedTensor>& saved);

// Rebuilds the cell's model from `checkpoint` and scores the test windows.
EvalResult evaluate_checkpoint(const ExperimentSpec& spec, std::size_t horizon, std::uint64_t seed,
                               const std::string& checkpoint);

std::string cell_name(std::size_t horizon, std::uint64_t seed);

// Debug aid: every training window's rendered hard prompt, one per line
// (section breaks shown as " | "). Returns the number of lines.
std::size_t dump_hard_prompts(const ExperimentSpec& spec, std::size_t horizon, const std::string& path);

// summary.txt body: per-horizon and horizon-averaged mean±std tables.
std::string render_summary(const MetricsTable& table, const ExperimentSpec& spec,
                           const std::vector<CellFailure>& failures);

// Output root: $TIMEPROMPT_OUT, else "runs".
std::string output_root();

void write_text(const std::string& path, const std::string& body);
std::string read_text(const std::string& path);

}  // namespace timeprompt
