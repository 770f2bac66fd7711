#pragma once

// Series ingestion, train-only scaling, chronological windows.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace timeprompt {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RawSeries {
  std::vector<std::string> variable_names;
  std::vector<std::string> timestamps;
  std::vector<double> values;  // rows() x cols(), row-major
  std::string frequency = "hourly";
  std::size_t filled_cells = 0;  // forward-filled during ingestion

  std::size_t rows() const { return timestamps.size(); }
  std::size_t cols() const { return variable_names.size(); }
  double at(std::size_t row, std::size_t col) const { return values[row * cols() + col]; }
  double& at(std::size_t row, std::size_t col) { return values[row * cols() + col]; }
};

struct LoadOptions {
  char delimiter = ',';
  bool forward_fill = false;
  std::string frequency = "hourly";
};

RawSeries load_series(const std::string& path, const LoadOptions& options = {});
RawSeries parse_series(std::istream& in, const LoadOptions& options = {});
void write_series(const RawSeries& series, const std::string& path);

struct RowRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool contains(std::size_t row) const { return row >= begin && row < end; }
};

struct SplitRatios {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

struct SplitRanges {
  RowRange train;
  RowRange val;
  RowRange test;
};

// Contiguous train/val/test ranges; each must hold at least `min_rows`.
SplitRanges chronological_split(std::size_t rows, const SplitRatios& ratios, std::size_t min_rows);

class Scaler {
 public:
  static Scaler fit(const RawSeries& series, RowRange train);

  RawSeries transform(const RawSeries& series) const;
  double transform(double value, std::size_t var) const { return (value - mean_[var]) / std_[var]; }
  double inverse(double value, std::size_t var) const { return value * std_[var] + mean_[var]; }

  const std::vector<double>& means() const { return mean_; }
  const std::vector<double>& stds() const { return std_; }
  // Variables whose training rows were constant; their std was forced to 1.
  const std::vector<bool>& constant_flags() const { return constant_; }

 private:
  std::vector<double> mean_;
  std::vector<double> std_;
  std::vector<bool> constant_;
};

// Fits on train rows only and transforms every row.
std::pair<Scaler, RawSeries> fit_transform(const RawSeries& series, RowRange train);

enum class Split { kTrain, kVal, kTest };
const char* split_name(Split split);

struct TimeWindow {
  std::vector<double> lookback;  // lookback_len x vars, row-major
  std::vector<double> target;    // horizon x vars
  std::size_t lookback_len = 0;
  std::size_t horizon = 0;
  std::size_t vars = 0;
  Split split = Split::kTrain;
  std::size_t origin = 0;  // source row of the first lookback value

  double lookback_at(std::size_t t, std::size_t var) const { return lookback[t * vars + var]; }
  double target_at(std::size_t t, std::size_t var) const { return target[t * vars + var]; }
  std::vector<double> lookback_column(std::size_t var) const;
};

struct WindowConfig {
  std::size_t lookback = 96;
  std::size_t horizon = 96;
  std::size_t stride = 1;
};

std::size_t window_count(std::size_t rows, const WindowConfig& cfg);

std::vector<TimeWindow> make_windows(const RawSeries& series, RowRange range, Split split,
                                     const WindowConfig& cfg);

struct WindowSets {
  std::vector<TimeWindow> train;
  std::vector<TimeWindow> val;
  std::vector<TimeWindow> test;
};

WindowSets make_windows(const RawSeries& series, const SplitRanges& ranges, const WindowConfig& cfg);

enum class FewShotMode { kPrefix, kRandom };

// First ceil(fraction * count) windows (prefix mode), or a seeded sample kept
// in chronological order (random mode).
std::vector<TimeWindow> few_shot_subsample(const std::vector<TimeWindow>& windows, double fraction,
                                           std::uint64_t seed, FewShotMode mode = FewShotMode::kPrefix);

}  // namespace timeprompt
