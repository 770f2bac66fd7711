#pragma once

// Tiny model and data configurations shared by the model-level tests and the
// acceptance runner.

#include <numeric>
#include <string>
#include <vector>

#include "timeprompt/data.hpp"
#include "timeprompt/experiment.hpp"
#include "timeprompt/model.hpp"

namespace fixture {

inline timeprompt::ModelConfig tiny_model(std::size_t lookback = 32, std::size_t horizon = 8) {
  timeprompt::ModelConfig cfg;
  cfg.lookback = lookback;
  cfg.horizon = horizon;
  cfg.dim = 16;
  cfg.fusion_heads = 2;
  cfg.patch = {8, 4};
  cfg.pool = {12, 3, 2, 0.01};
  cfg.hard_len = 3;
  cfg.backbone_layers = 1;
  cfg.backbone_heads = 2;
  cfg.ffn_mult = 2;
  cfg.lora = {2, 4.0, 0.1};
  cfg.head_dim = 8;
  return cfg;
}

struct TinyData {
  timeprompt::RawSeries raw;  // normalized
  timeprompt::Scaler scaler;
  timeprompt::WindowSets windows;
  timeprompt::PreparedSet train, val, test;
};

inline TinyData tiny_data(const timeprompt::ModelConfig& cfg, std::size_t rows = 400, std::size_t vars = 2,
                          std::uint64_t seed = 7) {
  using namespace timeprompt;
  SynthConfig synth;
  synth.rows = rows;
  synth.vars = vars;
  synth.seed = seed;
  TinyData d;
  const RawSeries raw = make_synthetic(synth);
  const auto ranges = chronological_split(raw.rows(), {}, cfg.lookback + cfg.horizon);
  auto [scaler, normalized] = fit_transform(raw, ranges.train);
  d.raw = std::move(normalized);
  d.scaler = std::move(scaler);
  d.windows = make_windows(d.raw, ranges, {cfg.lookback, cfg.horizon, 1});
  TimePromptModel probe(cfg);
  d.train = prepare_windows(d.windows.train, d.raw.variable_names, "synthetic", cfg, probe.tokenizer());
  d.val = prepare_windows(d.windows.val, d.raw.variable_names, "synthetic", cfg, probe.tokenizer());
  d.test = prepare_windows(d.windows.test, d.raw.variable_names, "synthetic", cfg, probe.tokenizer());
  return d;
}

inline timeprompt::Batch first_batch(const timeprompt::PreparedSet& set, std::size_t size, std::size_t hard_len) {
  std::vector<std::size_t> idx(std::min(size, set.size()));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return timeprompt::make_batch(set, idx, hard_len);
}

}  // namespace fixture
