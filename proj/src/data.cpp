#include "timeprompt/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "timeprompt/random.hpp"

namespace timeprompt {

namespace {

std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, delim)) out.push_back(cell);
  if (!line.empty() && line.back() == delim) out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

// ISO-8601 timestamp as its sequence of numeric fields.
std::vector<long> timestamp_key(const std::string& ts, std::size_t line) {
  std::vector<long> fields;
  long current = 0;
  bool in_number = false;
  for (char c : ts) {
    if (c >= '0' && c <= '9') {
      current = current * 10 + (c - '0');
      in_number = true;
    } else {
      if (in_number) fields.push_back(current);
      current = 0;
      in_number = false;
    }
  }
  if (in_number) fields.push_back(current);
  if (fields.size() < 3) {
    throw ParseError("row " + std::to_string(line) + ": '" + ts + "' is not an ISO-8601 timestamp");
  }
  return fields;
}

bool is_missing(const std::string& cell) {
  return cell.empty() || cell == "nan" || cell == "NaN" || cell == "NA" || cell == "null";
}

}  // namespace

RawSeries load_series(const std::string& path, const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open series file '" + path + "'");
  return parse_series(in, options);
}

RawSeries parse_series(std::istream& in, const LoadOptions& options) {
  RawSeries series;
  series.frequency = options.frequency;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!trim(line).empty()) break;
  }
  if (line_no == 0 || trim(line).empty()) throw ParseError("empty series file");
  const auto header = split_line(line, options.delimiter);
  if (header.size() < 2) {
    throw ParseError("row " + std::to_string(line_no) + ": header needs a timestamp and at least one variable");
  }
  for (std::size_t i = 1; i < header.size(); ++i) series.variable_names.push_back(trim(header[i]));
  const std::size_t vars = series.variable_names.size();

  std::vector<long> previous_key;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto cells = split_line(line, options.delimiter);
    if (cells.size() != vars + 1) {
      throw ParseError("row " + std::to_string(line_no) + ": expected " + std::to_string(vars + 1) +
                       " cells, found " + std::to_string(cells.size()));
    }
    const std::string ts = trim(cells[0]);
    auto key = timestamp_key(ts, line_no);
    if (!previous_key.empty() && !(previous_key < key)) {
      throw ParseError("row " + std::to_string(line_no) + ": timestamp '" + ts +
                       "' is not after the previous row (timestamps must be strictly increasing)");
    }
    previous_key = std::move(key);
    series.timestamps.push_back(ts);
    for (std::size_t v = 0; v < vars; ++v) {
      const std::string cell = trim(cells[v + 1]);
      if (is_missing(cell)) {
        if (!options.forward_fill || series.rows() == 1) {
          throw ParseError("row " + std::to_string(line_no) + ": missing value for '" +
                           series.variable_names[v] + "'");
        }
        series.values.push_back(series.values[series.values.size() - vars]);
        ++series.filled_cells;
        continue;
      }
      double value = 0.0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
      if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(value)) {
        throw ParseError("row " + std::to_string(line_no) + ": non-numeric cell '" + cell + "' for '" +
                         series.variable_names[v] + "'");
      }
      series.values.push_back(value);
    }
  }
  if (series.rows() == 0) throw ParseError("series file has a header but no data rows");
  return series;
}

void write_series(const RawSeries& series, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write series file '" + path + "'");
  out << "date";
  for (const auto& name : series.variable_names) out << ',' << name;
  out << '\n';
  out << std::setprecision(17);
  for (std::size_t r = 0; r < series.rows(); ++r) {
    out << series.timestamps[r];
    for (std::size_t c = 0; c < series.cols(); ++c) out << ',' << series.at(r, c);
    out << '\n';
  }
}

SplitRanges chronological_split(std::size_t rows, const SplitRatios& ratios, std::size_t min_rows) {
  if (ratios.train <= 0.0) throw DataError("train fraction must be positive");
  if (ratios.val <= 0.0) throw DataError("validation fraction must be positive");
  if (ratios.test <= 0.0) throw DataError("test fraction must be positive");
  if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
    throw DataError("split fractions must sum to 1");
  }
  const double n = static_cast<double>(rows);
  const auto train_end = static_cast<std::size_t>(std::llround(n * ratios.train));
  const auto val_end = static_cast<std::size_t>(std::llround(n * (ratios.train + ratios.val)));
  SplitRanges r{{0, train_end}, {train_end, val_end}, {val_end, rows}};
  for (const auto& [name, range] : {std::pair{"train", r.train}, {"val", r.val}, {"test", r.test}}) {
    if (range.size() < min_rows) {
      throw DataError(std::string(name) + " split shorter than window: " + std::to_string(range.size()) +
                      " rows < " + std::to_string(min_rows));
    }
  }
  return r;
}

Scaler Scaler::fit(const RawSeries& series, RowRange train) {
  if (train.size() == 0 || train.end > series.rows()) throw DataError("scaler: empty or out-of-range train rows");
  Scaler s;
  const std::size_t vars = series.cols();
  s.mean_.assign(vars, 0.0);
  s.std_.assign(vars, 0.0);
  s.constant_.assign(vars, false);
  const double n = static_cast<double>(train.size());
  for (std::size_t v = 0; v < vars; ++v) {
    double total = 0.0;
    for (std::size_t r = train.begin; r < train.end; ++r) total += series.at(r, v);
    const double mu = total / n;
    double sq = 0.0;
    for (std::size_t r = train.begin; r < train.end; ++r) sq += (series.at(r, v) - mu) * (series.at(r, v) - mu);
    double sd = std::sqrt(sq / n);
    if (!(sd > 0.0)) {
      sd = 1.0;
      s.constant_[v] = true;
    }
    s.mean_[v] = mu;
    s.std_[v] = sd;
  }
  return s;
}

RawSeries Scaler::transform(const RawSeries& series) const {
  RawSeries out = series;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t v = 0; v < out.cols(); ++v) out.at(r, v) = transform(series.at(r, v), v);
  }
  return out;
}

std::pair<Scaler, RawSeries> fit_transform(const RawSeries& series, RowRange train) {
  Scaler scaler = Scaler::fit(series, train);
  RawSeries normalized = scaler.transform(series);
  return {std::move(scaler), std::move(normalized)};
}

const char* split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

std::vector<double> TimeWindow::lookback_column(std::size_t var) const {
  std::vector<double> col(lookback_len);
  for (std::size_t t = 0; t < lookback_len; ++t) col[t] = lookback_at(t, var);
  return col;
}

std::size_t window_count(std::size_t rows, const WindowConfig& cfg) {
  const std::size_t span = cfg.lookback + cfg.horizon;
  if (rows < span || cfg.stride == 0) return 0;
  return (rows - span) / cfg.stride + 1;
}

std::vector<TimeWindow> make_windows(const RawSeries& series, RowRange range, Split split,
                                     const WindowConfig& cfg) {
  if (cfg.lookback == 0 || cfg.horizon == 0 || cfg.stride == 0) {
    throw DataError("window lookback, horizon and stride must be positive");
  }
  if (range.end > series.rows()) throw DataError("window range exceeds series length");
  if (range.size() < cfg.lookback + cfg.horizon) {
    throw DataError(std::string(split_name(split)) + " split has " + std::to_string(range.size()) +
                    " rows; a window needs " + std::to_string(cfg.lookback + cfg.horizon));
  }
  const std::size_t vars = series.cols();
  const std::size_t count = window_count(range.size(), cfg);
  std::vector<TimeWindow> windows;
  windows.reserve(count);
  for (std::size_t w = 0; w < count; ++w) {
    const std::size_t origin = range.begin + w * cfg.stride;
    TimeWindow tw;
    tw.lookback_len = cfg.lookback;
    tw.horizon = cfg.horizon;
    tw.vars = vars;
    tw.split = split;
    tw.origin = origin;
    const auto first = series.values.begin() + static_cast<std::ptrdiff_t>(origin * vars);
    tw.lookback.assign(first, first + static_cast<std::ptrdiff_t>(cfg.lookback * vars));
    tw.target.assign(first + static_cast<std::ptrdiff_t>(cfg.lookback * vars),
                     first + static_cast<std::ptrdiff_t>((cfg.lookback + cfg.horizon) * vars));
    windows.push_back(std::move(tw));
  }
  return windows;
}

WindowSets make_windows(const RawSeries& series, const SplitRanges& ranges, const WindowConfig& cfg) {
  return {make_windows(series, ranges.train, Split::kTrain, cfg),
          make_windows(series, ranges.val, Split::kVal, cfg),
          make_windows(series, ranges.test, Split::kTest, cfg)};
}

std::vector<TimeWindow> few_shot_subsample(const std::vector<TimeWindow>& windows, double fraction,
                                           std::uint64_t seed, FewShotMode mode) {
  if (!(fraction > 0.0) || fraction > 1.0) throw DataError("few-shot fraction must lie in (0, 1]");
  const auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(windows.size()) - 1e-9));
  if (keep == 0) throw DataError("few-shot subsample is empty");
  if (mode == FewShotMode::kPrefix) {
    return {windows.begin(), windows.begin() + static_cast<std::ptrdiff_t>(keep)};
  }
  std::vector<std::size_t> order(windows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  order.resize(keep);
  std::sort(order.begin(), order.end());
  std::vector<TimeWindow> out;
  out.reserve(keep);
  for (std::size_t i : order) out.push_back(windows[i]);
  return out;
}

}  // namespace timeprompt
