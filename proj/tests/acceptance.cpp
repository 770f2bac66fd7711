// Acceptance runner: one PASS/FAIL line per criterion, exit 3 if any fails.
//   acceptance [--only 1,4,9] [--out DIR]

#include "CLI11.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "timeprompt/experiment.hpp"
#include "timeprompt/train.hpp"

using namespace timeprompt;
using oracle::random_tensor;
using oracle::to_vec;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string out_root = "acceptance_runs";

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string fresh_dir(const std::string& name) {
  const auto dir = fs::path(out_root) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

std::uint64_t tensors_hash(const std::vector<NamedTensor>& ts, const std::string& path) {
  save_checkpoint(path, ts);
  return file_hash(path);
}

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream in(path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

// Same architecture as the default run, smaller training budget.
ExperimentSpec reduced_spec() {
  ExperimentSpec spec;
  spec.few_shot_fraction = 0.1;
  spec.train.epochs = 2;
  spec.train.patience = 2;
  return spec;
}

// ---------------------------------------------------------------------------

Outcome gradient_fidelity() {
  ModelConfig cfg;
  cfg.lookback = 32;
  cfg.horizon = 8;
  cfg.dim = 16;
  cfg.pool = {8, 3, 2, 0.01};
  SynthConfig synth;
  synth.vars = 1;
  synth.rows = 300;
  RawSeries raw = make_synthetic(synth);
  auto windows = make_windows(raw, {0, raw.rows()}, Split::kTrain, {32, 8, 1});
  windows.resize(2);

  TimePromptModel model(cfg);
  // B = 0 at init would make every adapter-A gradient vanish; give the
  // adapters a nonzero state so both factors are exercised.
  Rng rng(91);
  for (auto* lin : model.backbone().linears()) {
    if (!lin->has_adapter()) continue;
    for (double& v : lin->lora_b.mutable_data()) v = rng.normal(0.0, 0.1);
  }
  const auto set = prepare_windows(windows, raw.variable_names, "synthetic", cfg, model.tokenizer());
  const auto batch = fixture::first_batch(set, 2, cfg.hard_len);
  auto loss = [&] {
    auto out = model.forward(batch);
    return model.training_loss(out, batch);
  };

  auto params = model.trainable_parameters();
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    tape.backward(loss());
    for (auto& p : params) {
      analytic.emplace_back(p.tensor.size(), 0.0);
      if (p.tensor.has_grad()) analytic.back().assign(p.tensor.grad().begin(), p.tensor.grad().end());
      p.tensor.clear_grad();
    }
  }

  // Rounding noise scales as 1/eps; 1e-5 keeps it well under the bound while
  // staying small enough not to flip any top-k selection.
  const double eps = 1e-5;
  double worst = 0.0;
  std::string worst_name;
  std::size_t entries = 0;
  NoGradGuard guard;
  for (std::size_t g = 0; g < params.size(); ++g) {
    auto values = params[g].tensor.mutable_data();
    double max_diff = 0.0;
    double scale = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double plus = loss().item();
      values[i] = saved - eps;
      const double minus = loss().item();
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      max_diff = std::max(max_diff, std::abs(numeric - analytic[g][i]));
      scale = std::max({scale, std::abs(numeric), std::abs(analytic[g][i])});
      ++entries;
    }
    const double rel = scale > 0.0 ? max_diff / scale : (max_diff > 0.0 ? INFINITY : 0.0);
    if (rel >= worst) {
      worst = rel;
      worst_name = params[g].name;
    }
  }
  return {worst <= 1e-4, fmt("%zu groups, %zu entries, worst relative error %.2e (%s)", params.size(), entries, worst,
                            worst_name.c_str())};
}

Outcome retrieval_oracle() {
  Rng rng(2);
  std::size_t index_mismatch = 0;
  std::size_t gather_mismatch = 0;
  double worst_score = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t b = 1 + rng.below(3), n = 1 + rng.below(3), d = 1 + rng.below(16);
    const std::size_t p = 1 + rng.below(40), k = 1 + rng.below(p), len = 1 + rng.below(4);
    auto xbar = random_tensor({b, n, d}, rng);
    auto keys_v = rng.normal_vector(p * d, 0.0, 1.0);
    if (p > 2 && trial % 4 == 0) std::copy_n(keys_v.begin(), d, keys_v.begin() + static_cast<std::ptrdiff_t>(d));
    auto keys = Tensor::constant({p, d}, keys_v);
    auto values = random_tensor({p, len, d}, rng);

    auto scores = compute_similarity(xbar, keys);
    auto xv = to_vec(xbar);
    std::vector<double> ref(b * n * p, 0.0);
    for (std::size_t g = 0; g < b * n; ++g)
      for (std::size_t j = 0; j < p; ++j)
        for (std::size_t t = 0; t < d; ++t) ref[g * p + j] += xv[g * d + t] * keys_v[j * d + t];
    worst_score = std::max(worst_score, oracle::max_abs_diff(to_vec(scores), ref));

    auto top = select_top_k(scores, k);
    if (top.index != oracle::top_k_by_sort(to_vec(scores), b * n, p, k)) ++index_mismatch;

    auto gathered = to_vec(gather_prompts(values, top));
    auto vv = to_vec(values);
    const std::size_t row = len * d;
    for (std::size_t g = 0; g < b * n; ++g)
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t src = top.index[g * k + j];
        if (!std::equal(vv.begin() + static_cast<std::ptrdiff_t>(src * row),
                        vv.begin() + static_cast<std::ptrdiff_t>((src + 1) * row),
                        gathered.begin() + static_cast<std::ptrdiff_t>((g * k + j) * row))) {
          ++gather_mismatch;
        }
      }
  }
  const bool ok = index_mismatch == 0 && gather_mismatch == 0 && worst_score <= 1e-12;
  return {ok, fmt("1000 instances: index mismatches %zu, gather mismatches %zu, worst score diff %.1e", index_mismatch,
                  gather_mismatch, worst_score)};
}

Outcome attention_oracle() {
  Rng rng(3);
  double worst = 0.0;
  std::size_t cases = 0;
  for (std::size_t b : {1, 2})
    for (std::size_t n : {1, 2})
      for (std::size_t m : {1, 4})
        for (std::size_t heads : {1, 2, 4}) {
          const std::size_t d = 8, g = b * n;
          MultiHeadCrossAttention attn(d, heads, 100 + heads);
          auto wq = to_vec(attn.w_query), wk = to_vec(attn.w_key), wv = to_vec(attn.w_value), wo = to_vec(attn.w_out);
          auto x = random_tensor({b, n, m, d}, rng);
          for (std::size_t v : {1, 6}) {
            auto vocab = random_tensor({v, d}, rng);
            auto got = to_vec(reprogram(x, vocab, attn));
            auto ref = oracle::attention(to_vec(x), to_vec(vocab), g, m, v, d, heads, wq, wk, wv, wo, true);
            worst = std::max(worst, oracle::max_abs_diff(got, ref));
            ++cases;
          }
          MultiHeadCrossAttention other(d, heads, 200 + heads);
          for (std::size_t s : {1, 3, 5}) {
            auto soft = random_tensor({b, n, s, d}, rng);
            auto hard = random_tensor({b, n, s + 1, d}, rng);
            auto [z1, z2] = align(x, soft, hard, attn, other);
            worst = std::max(worst, oracle::max_abs_diff(to_vec(z1), oracle::attention(to_vec(x), to_vec(soft), g, m, s,
                                                                                       d, heads, wq, wk, wv, wo, false)));
            worst = std::max(worst, oracle::max_abs_diff(
                                        to_vec(z2), oracle::attention(to_vec(x), to_vec(hard), g, m, s + 1, d, heads,
                                                                      to_vec(other.w_query), to_vec(other.w_key),
                                                                      to_vec(other.w_value), to_vec(other.w_out), false)));
            cases += 2;
          }
        }
  return {worst <= 1e-10, fmt("%zu cases up to (2,2,4,8), worst abs diff %.1e", cases, worst)};
}

Outcome gate_contract() {
  auto cfg = fixture::tiny_model();
  auto data = fixture::tiny_data(cfg, 500);
  TimePromptModel model(cfg);
  TrainConfig tc;
  tc.lr_max = 1e-2;
  tc.batch = 16;
  tc.epochs = 10;
  tc.patience = 10;
  const std::size_t per_epoch = (data.train.size() + tc.batch - 1) / tc.batch;
  if (per_epoch * tc.epochs != 200) return {false, fmt("fixture gives %zu steps, expected 200", per_epoch * tc.epochs)};

  const auto probe = fixture::first_batch(data.val, 8, cfg.hard_len);
  std::size_t steps = 0;
  double worst_sum = 0.0;
  std::size_t outside = 0;
  std::size_t strict_outside = 0;
  double g_min = 1.0;
  double g_max = 0.0;
  TrainHooks hooks;
  hooks.after_step = [&](std::size_t, const TimePromptModel& m) {
    ++steps;
    NoGradGuard guard;
    auto g = to_vec(active_gates(m.gate(), m.soft_active(), m.hard_active()));
    double s = 0.0;
    for (double v : g) {
      s += v;
      g_min = std::min(g_min, v);
      g_max = std::max(g_max, v);
    }
    worst_sum = std::max(worst_sum, std::abs(s - 1.0));

    Rng drop(7);
    auto out = m.forward(probe, &drop);
    auto x = to_vec(out.reprogrammed);
    auto z1 = to_vec(m.soft_aligner().forward(out.reprogrammed, out.soft_prompt));
    auto z2 = to_vec(m.hard_aligner().forward(out.reprogrammed, out.hard_prompt));
    auto z = to_vec(out.backbone_input);
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double lo = std::min({x[i], z1[i], z2[i]});
      const double hi = std::max({x[i], z1[i], z2[i]});
      const double slack = 4.0 * std::numeric_limits<double>::epsilon() * std::max(std::abs(lo), std::abs(hi));
      if (z[i] < lo || z[i] > hi) ++strict_outside;
      if (z[i] < lo - slack || z[i] > hi + slack) ++outside;
    }
  };
  train(model, data.train, data.val, tc, hooks);
  const bool ok = steps == 200 && worst_sum <= 1e-12 && outside == 0;
  return {ok, fmt("%zu steps, max |sum g - 1| = %.1e, gates in [%.3f, %.3f], envelope violations %zu (strict %zu)",
                  steps, worst_sum, g_min, g_max, outside, strict_outside)};
}

Outcome lora_contract() {
  const LoraConfig cfg{8, 16.0, 0.1};
  Rng rng(5);
  std::size_t identity_fail = 0;
  double worst_merge = 0.0;
  std::size_t probes = 0;

  std::vector<LoraLinear> layers;
  for (int i = 0; i < 4; ++i) layers.emplace_back(64, 64, cfg, true, rng);
  for (auto& l : layers) {
    auto x = random_tensor({5, 64}, rng);
    auto base = to_vec(add(matmul(x, transpose(l.weight, 0, 1)), l.bias));
    if (to_vec(l.forward(x)) != base) ++identity_fail;
    l.set_training(true);
    Rng drop(9);
    if (to_vec(l.forward(x, &drop)) != base) ++identity_fail;
    l.set_training(false);

    for (double& v : l.lora_b.mutable_data()) v = rng.normal(0.0, 0.2);
    auto merged = merge_lora(l);
    for (int p = 0; p < 25; ++p) {
      auto probe = random_tensor({3, 64}, rng);
      auto via_merge = to_vec(add(matmul(probe, transpose(merged, 0, 1)), l.bias));
      worst_merge = std::max(worst_merge, oracle::max_abs_diff(to_vec(l.forward(probe)), via_merge));
      ++probes;
    }
  }
  // The adapters as wired into the default backbone.
  Backbone bb(BackboneConfig{});
  for (auto* l : bb.linears()) {
    if (!l->has_adapter()) continue;
    if (l->scaling() != 2.0) ++identity_fail;
  }
  const bool ok = identity_fail == 0 && worst_merge <= 1e-10 && probes == 100;
  return {ok, fmt("r=8 alpha=16 dropout=0.1: identity failures %zu, %zu merge probes, worst diff %.1e", identity_fail,
                  probes, worst_merge)};
}

Outcome freezing_contract() {
  ExperimentSpec spec;
  const std::uint64_t seed = spec.seeds.front();
  const LoadedData data = load_experiment_data(spec, spec.horizons.front(), seed);
  ModelConfig mc = spec.model;
  mc.seed = seed;
  TimePromptModel model(mc);
  const auto names = data.raw.variable_names;
  const auto train_set = prepare_windows(data.windows.train, names, spec.dataset, mc, model.tokenizer());
  const auto val_set = prepare_windows(data.windows.val, names, spec.dataset, mc, model.tokenizer());

  const auto dir = fresh_dir("c6");
  const auto before = tensors_hash(model.frozen_parameters(), dir + "/frozen_before.ckpt");
  TrainConfig tc = spec.train;
  tc.seed = seed;
  auto res = train(model, train_set, val_set, tc);
  const auto after = tensors_hash(model.frozen_parameters(), dir + "/frozen_after.ckpt");
  return {before == after && res.trace.size() > 0,
          fmt("%zu steps over %zu epochs, hash %016llx -> %016llx", res.trace.size(), res.epochs.size(),
              static_cast<unsigned long long>(before), static_cast<unsigned long long>(after))};
}

Outcome leakage_suite() {
  ExperimentSpec spec;
  const std::size_t t = spec.lookback, h = spec.horizons.front();
  const RawSeries raw = make_synthetic(spec.synth);
  const auto ranges = chronological_split(raw.rows(), spec.split, t + h);
  std::size_t violations = 0;
  std::size_t checked = 0;

  // Scaler: every value after the train range belongs to some validation or
  // test horizon. Fit through the file path the CLI uses.
  const auto dir = fresh_dir("c7");
  write_series(raw, dir + "/clean.csv");
  RawSeries dirty_raw = raw;
  Rng rng(7);
  for (std::size_t r = ranges.train.end; r < raw.rows(); ++r)
    for (std::size_t v = 0; v < raw.cols(); ++v) dirty_raw.at(r, v) = 1e4 * rng.normal();
  write_series(dirty_raw, dir + "/dirty.csv");
  ExperimentSpec clean_spec = spec, dirty_spec = spec;
  clean_spec.data_path = dir + "/clean.csv";
  dirty_spec.data_path = dir + "/dirty.csv";
  const auto a = load_experiment_data(clean_spec, h, 2021);
  const auto b = load_experiment_data(dirty_spec, h, 2021);
  violations += a.scaler.means() != b.scaler.means();
  violations += a.scaler.stds() != b.scaler.stds();
  violations += a.windows.train.size() != b.windows.train.size();
  for (std::size_t i = 0; i < std::min(a.windows.train.size(), b.windows.train.size()); ++i) {
    violations += a.windows.train[i].lookback != b.windows.train[i].lookback;
    violations += a.windows.train[i].target != b.windows.train[i].target;
  }

  // Per window: rewrite exactly that window's horizon rows and rebuild
  // everything the model sees.
  TimePromptModel model(spec.model);
  const Tokenizer& tok = model.tokenizer();
  auto [scaler, scaled] = fit_transform(raw, ranges.train);
  for (auto [range, split] : {std::pair{ranges.train, Split::kTrain}, std::pair{ranges.val, Split::kVal},
                              std::pair{ranges.test, Split::kTest}}) {
    const auto clean = make_windows(scaled, range, split, {t, h, 1});
    const auto clean_set = prepare_windows(clean, scaled.variable_names, spec.dataset, spec.model, tok);
    const std::size_t step = std::max<std::size_t>(1, clean.size() / 12);
    for (std::size_t w = 0; w < clean.size(); w += step) {
      RawSeries mutated = scaled;
      for (std::size_t r = clean[w].origin + t; r < clean[w].origin + t + h; ++r)
        for (std::size_t v = 0; v < mutated.cols(); ++v) mutated.at(r, v) += 100.0 + rng.normal();
      auto dirty = make_windows(mutated, range, split, {t, h, 1});
      std::vector<TimeWindow> one_clean{clean[w]}, one_dirty{dirty[w]};
      violations += clean[w].lookback != dirty[w].lookback;
      for (std::size_t v = 0; v < scaled.cols(); ++v) {
        const PromptMeta meta{spec.dataset, scaled.variable_names[v], h};
        const auto pa = build_hard_prompt(clean[w].lookback_column(v), meta, tok, spec.model.hard_len);
        const auto pb = build_hard_prompt(dirty[w].lookback_column(v), meta, tok, spec.model.hard_len);
        violations += pa.text != pb.text;
        violations += pa.token_ids != pb.token_ids;
        violations += pa.retained_ids != pb.retained_ids;
        violations += to_vec(embed_hard_prompt(pa.text, tok)) != to_vec(embed_hard_prompt(pb.text, tok));
      }
      const auto dirty_set = prepare_windows(one_dirty, scaled.variable_names, spec.dataset, spec.model, tok);
      const std::vector<std::size_t> idx{w};
      const std::vector<std::size_t> zero{0};
      const auto ba = make_batch(clean_set, idx, spec.model.hard_len);
      const auto bb = make_batch(dirty_set, zero, spec.model.hard_len);
      violations += to_vec(ba.series) != to_vec(bb.series);
      violations += ba.hard_ids != bb.hard_ids;
      violations += to_vec(ba.target) == to_vec(bb.target);  // the mutation must have landed
      ++checked;
    }
  }
  return {violations == 0, fmt("scaler + %zu train windows via file path, %zu mutated windows across splits, %zu "
                               "violations",
                               a.windows.train.size(), checked, violations)};
}

Outcome determinism() {
  ExperimentSpec spec = reduced_spec();
  spec.seeds = {2021};
  const auto a = fresh_dir("c8/run_a");
  const auto b = fresh_dir("c8/run_b");
  run_experiment(spec, a);
  run_experiment(spec, b);
  std::size_t differ = 0;
  const auto cell = cell_name(96, 2021);
  for (const std::string f : {cell + "/trace.csv", cell + "/epochs.csv", cell + "/preds.csv", std::string("metrics.csv")}) {
    differ += read_text(a + "/" + f) != read_text(b + "/" + f);
  }

  spec.seeds = {2021, 2023, 2025};
  const auto c = fresh_dir("c8/three_seeds");
  auto res = run_experiment(spec, c);
  const auto agg = res.table.by_horizon();
  const auto summary = read_text(c + "/summary.txt");
  bool report = res.failures.empty() && res.table.rows().size() == 3 && agg.size() == 1 && agg[0].count == 3;
  const std::string mse = agg.empty() ? "" : format_mean_std(agg[0].mse_mean, agg[0].mse_std);
  const std::string mae = agg.empty() ? "" : format_mean_std(agg[0].mae_mean, agg[0].mae_std);
  report = report && summary.find(mse) != std::string::npos && summary.find(mae) != std::string::npos;
  return {differ == 0 && report,
          fmt("2 runs: %zu differing files; seeds 2021/2023/2025 MSE %s MAE %s", differ, mse.c_str(), mae.c_str())};
}

Outcome desk_scale_learning() {
  ExperimentSpec spec;  // 2 vars, 2000 rows, T = H = 96, 10 epochs, 3 seeds
  const auto dir = fresh_dir("c9");
  const auto t0 = std::chrono::steady_clock::now();
  auto res = run_experiment(spec, dir);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::size_t good = 0;
  std::string per_seed;
  for (const auto& row : res.table.rows()) {
    const auto epochs = read_csv(dir + "/" + cell_name(row.horizon, row.seed) + "/epochs.csv");
    const double first = std::stod(epochs.front().at(1));
    const double last = std::stod(epochs.back().at(1));
    const bool a = last < 0.5 * first;
    const bool b = row.mse <= 0.8 * row.persistence_mse;
    good += a && b;
    per_seed += fmt(" [seed %llu: loss %.4f->%.4f%s, mse %.4f vs persistence %.4f%s]",
                    static_cast<unsigned long long>(row.seed), first, last, a ? "" : " (a fails)", row.mse,
                    row.persistence_mse, b ? "" : " (b fails)");
  }
  const bool ok = good >= 2 && secs < 15 * 60 && res.failures.empty();
  return {ok, fmt("%zu/3 seeds meet (a) and (b), %.0f s;", good, secs) + per_seed};
}

Outcome ablation_plumbing() {
  std::size_t problems = 0;
  std::string notes;
  auto cfg = fixture::tiny_model();
  auto data = fixture::tiny_data(cfg, 500);
  const auto batch = fixture::first_batch(data.train, 4, cfg.hard_len);
  auto names_of = [](const TimePromptModel& m) {
    std::set<std::string> s;
    for (const auto& p : m.trainable_parameters()) s.insert(p.name);
    return s;
  };
  auto has = [](const std::set<std::string>& s, const std::string& part) {
    return std::any_of(s.begin(), s.end(), [&](const std::string& n) { return n.find(part) != std::string::npos; });
  };
  const auto full = names_of(TimePromptModel(cfg));
  for (const auto& flags : ablation_suite()) {
    auto c = cfg;
    c.ablate = flags;
    TimePromptModel m(c);
    const auto names = names_of(m);
    const auto out = m.forward(batch);
    const auto label = flags.label();
    bool ok = true;
    if (label == "full") {
      ok = has(names, "pool.") && has(names, "align_soft.") && has(names, "align_hard.") && has(names, "gate") &&
           has(names, "lora") && out.soft_prompt.defined() && out.hard_prompt.defined();
    } else if (label == "no_sp") {
      ok = !has(names, "pool.") && !has(names, "align_soft.") && has(names, "align_hard.") &&
           !out.soft_prompt.defined() && !out.surrogate.defined() && out.selected.index.empty() &&
           out.hard_prompt.defined();
    } else if (label == "no_hp") {
      ok = !has(names, "align_hard.") && has(names, "pool.") && !out.hard_prompt.defined() &&
           out.soft_prompt.defined();
    } else if (label == "no_cma") {
      ok = !has(names, "pool.") && !has(names, "align_") && !has(names, "gate") &&
           to_vec(out.backbone_input) == to_vec(out.reprogrammed);
    } else if (label == "no_lora") {
      ok = !has(names, "lora") && m.backbone().adapter_parameters().empty() &&
           names.size() + 2 * 2 * cfg.backbone_layers == full.size();
    }
    // Every parameter that is still listed must take part in the graph.
    {
      Tape tape;
      tape.backward(m.training_loss(m.forward(batch), batch));
      for (const auto& p : m.trainable_parameters()) ok = ok && p.tensor.has_grad();
      for (const auto& p : m.frozen_parameters()) ok = ok && !p.tensor.has_grad();
    }
    if (!ok) {
      ++problems;
      notes += " " + label;
    }
  }

  const auto dir = fresh_dir("c10");
  auto res = run_ablation(reduced_spec(), dir);
  std::set<std::string> labels;
  for (const auto& r : res.table.rows()) labels.insert(r.ablation);
  const bool table = res.failures.empty() && labels.size() == 5 && res.table.rows().size() == 15 &&
                     fs::exists(dir + "/summary.txt");
  std::string ranking;
  double best = std::numeric_limits<double>::infinity();
  std::string best_label;
  for (const auto& a : res.table.by_ablation()) {
    ranking += fmt(" %s=%.4f", a.ablation.c_str(), a.mse_mean);
    if (a.mse_mean < best) best = a.mse_mean, best_label = a.ablation;
  }
  return {problems == 0 && table,
          fmt("flag contract problems %zu%s; table %zu rows;", problems, notes.c_str(), res.table.rows().size()) +
              ranking + " (lowest: " + best_label + ", not gating)"};
}

Outcome sweep_harness() {
  ModelConfig defaults;
  const bool defaults_ok = defaults.pool.soft_len == 5 && defaults.pool.pool_size == 100 && defaults.pool.top_k == 5;
  ExperimentSpec spec = reduced_spec();
  spec.seeds = {2021};
  const auto dir = fresh_dir("c11");
  auto res = run_sweep(spec, dir);
  std::set<std::string> labels;
  for (const auto& r : res.table.rows()) labels.insert(r.ablation);
  std::set<std::string> expected;
  for (const auto& c : sweep_grid()) expected.insert(c.factor + "=" + std::to_string(c.value));
  const bool ok = defaults_ok && res.failures.empty() && labels == expected && expected.size() == 16;
  return {ok, fmt("%zu/16 cells, defaults L=%zu P=%zu k=%zu, %zu failures", labels.size(), defaults.pool.soft_len,
                  defaults.pool.pool_size, defaults.pool.top_k, res.failures.size())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria runner"};
  std::vector<int> only;
  app.add_option("--only", only, "criterion numbers to run")->delimiter(',');
  app.add_option("--out", out_root, "directory for run artifacts");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient fidelity", gradient_fidelity},
      {"retrieval oracle", retrieval_oracle},
      {"attention oracle", attention_oracle},
      {"gate contract", gate_contract},
      {"lora contract", lora_contract},
      {"freezing contract", freezing_contract},
      {"leakage suite", leakage_suite},
      {"determinism", determinism},
      {"desk-scale learning", desk_scale_learning},
      {"ablation plumbing", ablation_plumbing},
      {"sweep harness", sweep_harness},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), number) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %2d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", number, criteria[i].first, o.detail.c_str(),
                secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 3;
}
