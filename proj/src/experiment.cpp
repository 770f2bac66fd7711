#include "timeprompt/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <unordered_map>

namespace timeprompt {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

std::string num(std::uint64_t v) { return std::to_string(v); }

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError(key + ": '" + v + "' is not a number");
  }
  return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError(key + ": '" + v + "' is not a non-negative integer");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": '" + v + "' is not a boolean (true/false)");
}

template <typename T>
std::string join(const std::vector<T>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ',';
    out += num(static_cast<std::uint64_t>(items[i]));
  }
  return out;
}

struct Field {
  std::string key;
  std::function<std::string(const ExperimentSpec&)> get;
  std::function<void(ExperimentSpec&, const std::string&)> set;
};

// Helpers binding a field of the spec to its textual form.
template <typename Member>
Field size_field(std::string key, Member member) {
  return {key, [member](const ExperimentSpec& s) { return num(static_cast<std::uint64_t>(member(s))); },
          [member, key](ExperimentSpec& s, const std::string& v) {
            member(s) = static_cast<std::remove_reference_t<decltype(member(s))>>(parse_uint(key, v));
          }};
}

template <typename Member>
Field double_field(std::string key, Member member) {
  return {key, [member](const ExperimentSpec& s) { return num(member(s)); },
          [member, key](ExperimentSpec& s, const std::string& v) { member(s) = parse_double(key, v); }};
}

template <typename Member>
Field bool_field(std::string key, Member member) {
  return {key, [member](const ExperimentSpec& s) { return std::string(member(s) ? "true" : "false"); },
          [member, key](ExperimentSpec& s, const std::string& v) { member(s) = parse_bool(key, v); }};
}

template <typename Member>
Field string_field(std::string key, Member member) {
  return {key, [member](const ExperimentSpec& s) { return member(s); },
          [member](ExperimentSpec& s, const std::string& v) { member(s) = v; }};
}

#define M(expr) [](auto& s) -> auto& { return s.expr; }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(string_field("data.path", M(data_path)));
    f.push_back(string_field("data.name", M(dataset)));
    f.push_back({"data.split",
                 [](const ExperimentSpec& s) {
                   return num(s.split.train) + "," + num(s.split.val) + "," + num(s.split.test);
                 },
                 [](ExperimentSpec& s, const std::string& v) {
                   auto parts = split_list(v);
                   if (parts.size() != 3) throw ConfigError("data.split: expected train,val,test fractions");
                   s.split = {parse_double("data.split", parts[0]), parse_double("data.split", parts[1]),
                              parse_double("data.split", parts[2])};
                 }});
    f.push_back(size_field("data.lookback", M(lookback)));
    f.push_back({"data.horizon", [](const ExperimentSpec& s) { return join(s.horizons); },
                 [](ExperimentSpec& s, const std::string& v) {
                   s.horizons.clear();
                   for (const auto& p : split_list(v)) s.horizons.push_back(parse_uint("data.horizon", p));
                 }});
    f.push_back(size_field("data.stride", M(stride)));
    f.push_back(bool_field("data.forward_fill", M(forward_fill)));
    f.push_back(double_field("data.few_shot_fraction", M(few_shot_fraction)));
    f.push_back({"data.few_shot_mode",
                 [](const ExperimentSpec& s) {
                   return std::string(s.few_shot_mode == FewShotMode::kPrefix ? "prefix" : "random");
                 },
                 [](ExperimentSpec& s, const std::string& v) {
                   if (v == "prefix") s.few_shot_mode = FewShotMode::kPrefix;
                   else if (v == "random") s.few_shot_mode = FewShotMode::kRandom;
                   else throw ConfigError("data.few_shot_mode: expected prefix or random, got '" + v + "'");
                 }});
    f.push_back(size_field("synth.rows", M(synth.rows)));
    f.push_back(size_field("synth.vars", M(synth.vars)));
    f.push_back(double_field("synth.period", M(synth.period)));
    f.push_back(double_field("synth.trend", M(synth.trend)));
    f.push_back(double_field("synth.noise", M(synth.noise)));
    f.push_back(size_field("synth.seed", M(synth.seed)));
    f.push_back({"train.seeds", [](const ExperimentSpec& s) { return join(s.seeds); },
                 [](ExperimentSpec& s, const std::string& v) {
                   s.seeds.clear();
                   for (const auto& p : split_list(v)) s.seeds.push_back(parse_uint("train.seeds", p));
                 }});
    f.push_back(double_field("train.lr_max", M(train.lr_max)));
    f.push_back(size_field("train.batch", M(train.batch)));
    f.push_back(size_field("train.epochs", M(train.epochs)));
    f.push_back(size_field("train.patience", M(train.patience)));
    f.push_back(double_field("train.pct_start", M(train.pct_start)));
    f.push_back(double_field("train.div_factor", M(train.div_factor)));
    f.push_back(double_field("train.final_div", M(train.final_div)));
    f.push_back(double_field("train.clip_norm", M(train.clip_norm)));
    f.push_back(string_field("train.early_stop_metric", M(train.early_stop_metric)));
    f.push_back(size_field("model.dim", M(model.dim)));
    f.push_back(size_field("model.backbone_seed", M(model.backbone_seed)));
    f.push_back(size_field("fusion.patch_len", M(model.patch.patch_len)));
    f.push_back(size_field("fusion.stride", M(model.patch.stride)));
    f.push_back(size_field("prompt.pool_size", M(model.pool.pool_size)));
    f.push_back(size_field("prompt.soft_len", M(model.pool.soft_len)));
    f.push_back(size_field("prompt.top_k", M(model.pool.top_k)));
    f.push_back(size_field("prompt.hard_len", M(model.hard_len)));
    f.push_back(double_field("prompt.key_surrogate_weight", M(model.pool.key_surrogate_weight)));
    f.push_back(size_field("prompt.lag_count", M(model.stats.lag_count)));
    f.push_back(double_field("prompt.flat_threshold", M(model.stats.flat_threshold)));
    f.push_back(size_field("fusion.heads", M(model.fusion_heads)));
    f.push_back(size_field("backbone.layers", M(model.backbone_layers)));
    f.push_back(size_field("backbone.heads", M(model.backbone_heads)));
    f.push_back(size_field("backbone.ffn_mult", M(model.ffn_mult)));
    f.push_back(size_field("lora.rank", M(model.lora.rank)));
    f.push_back(double_field("lora.alpha", M(model.lora.alpha)));
    f.push_back(double_field("lora.dropout", M(model.lora.dropout)));
    f.push_back(size_field("head.dim", M(model.head_dim)));
    f.push_back(bool_field("ablate.no_sp", M(model.ablate.no_sp)));
    f.push_back(bool_field("ablate.no_hp", M(model.ablate.no_hp)));
    f.push_back(bool_field("ablate.no_cma", M(model.ablate.no_cma)));
    f.push_back(bool_field("ablate.no_lora", M(model.ablate.no_lora)));
    f.push_back(bool_field("eval.denormalize", M(denormalize)));
    f.push_back(size_field("eval.batch", M(eval_batch)));
    f.push_back(string_field("run.id", M(run_id)));
    return f;
  }();
  return table;
}

#undef M

std::string cell_failure_name(const std::string& label, std::size_t horizon, std::uint64_t seed) {
  return label + "/" + cell_name(horizon, seed);
}

struct Variant {
  std::string label;
  ExperimentSpec spec;
};

ExperimentResult run_grid(const ExperimentSpec& base, const std::vector<Variant>& variants, const std::string& out_dir,
                          bool nested) {
  validate_spec(base);
  for (const auto& v : variants) validate_spec(v.spec);
  fs::create_directories(out_dir);
  write_text((fs::path(out_dir) / "manifest.txt").string(), render_manifest(base));
  ExperimentResult result;
  result.out_dir = out_dir;
  for (const auto& v : variants) {
    for (std::size_t h : v.spec.horizons) {
      for (std::uint64_t seed : v.spec.seeds) {
        fs::path dir = fs::path(out_dir);
        if (nested) dir /= v.label;
        dir /= cell_name(h, seed);
        try {
          CellOutput cell = run_cell(v.spec, h, seed, dir.string());
          cell.row.ablation = v.label;
          result.table.add(cell.row);
        } catch (const std::exception& e) {
          result.failures.push_back({cell_failure_name(v.label, h, seed), e.what()});
        }
      }
    }
  }
  write_text((fs::path(out_dir) / "metrics.csv").string(), result.table.to_csv());
  write_text((fs::path(out_dir) / "summary.txt").string(), render_summary(result.table, base, result.failures));
  return result;
}

void mean_std(const std::vector<double>& xs, double& mean, double& std) {
  mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  std = std::sqrt(var / static_cast<double>(xs.size()));
}

std::string pad(const std::string& s, std::size_t width) {
  // Width counts code points so "±" aligns.
  std::size_t cps = 0;
  for (unsigned char c : s) cps += (c & 0xC0) != 0x80;
  return cps >= width ? s + " " : s + std::string(width - cps, ' ');
}

}  // namespace

RawSeries make_synthetic(const SynthConfig& cfg) {
  if (cfg.rows == 0 || cfg.vars == 0) throw ConfigError("synth: rows and vars must be positive");
  if (!(cfg.period > 0.0)) throw ConfigError("synth: period must be positive");
  if (cfg.noise < 0.0) throw ConfigError("synth: noise must be >= 0");
  RawSeries s;
  for (std::size_t v = 0; v < cfg.vars; ++v) s.variable_names.push_back("var" + std::to_string(v));
  s.frequency = "hourly";
  s.timestamps.reserve(cfg.rows);
  s.values.resize(cfg.rows * cfg.vars);
  using namespace std::chrono;
  const sys_days start = year{2016} / July / 1;
  Rng rng(cfg.seed);
  for (std::size_t t = 0; t < cfg.rows; ++t) {
    const auto when = start + hours(static_cast<long>(t));
    const auto day = floor<days>(when);
    const year_month_day ymd{day};
    const auto hh = duration_cast<hours>(when - day).count();
    char ts[32];
    std::snprintf(ts, sizeof ts, "%04d-%02u-%02u %02ld:00:00", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), static_cast<long>(hh));
    s.timestamps.emplace_back(ts);
    for (std::size_t v = 0; v < cfg.vars; ++v) {
      const double amp = 1.0 + 0.25 * static_cast<double>(v);
      const double phase = static_cast<double>(v) * std::numbers::pi / 3.0;
      const double slope = cfg.trend * (v % 2 == 0 ? 1.0 : -1.0) * (1.0 + 0.5 * static_cast<double>(v / 2));
      const double x = static_cast<double>(t);
      s.values[t * cfg.vars + v] =
          amp * std::sin(2.0 * std::numbers::pi * x / cfg.period + phase) + slope * x + rng.normal(0.0, cfg.noise);
    }
  }
  return s;
}

std::map<std::string, std::string> parse_config(std::istream& in) {
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

std::map<std::string, std::string> read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  return parse_config(in);
}

void apply_config(ExperimentSpec& spec, const std::map<std::string, std::string>& values) {
  static const auto index = [] {
    std::unordered_map<std::string, const Field*> m;
    for (const auto& f : fields()) m[f.key] = &f;
    return m;
  }();
  for (const auto& [key, value] : values) {
    auto it = index.find(key);
    if (it == index.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second->set(spec, value);
  }
}

std::string render_manifest(const ExperimentSpec& spec) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(spec) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.key);
  return out;
}

void validate_spec(const ExperimentSpec& s) {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (s.horizons.empty()) fail("data.horizon: at least one horizon required");
  for (std::size_t h : s.horizons) {
    if (h == 0) fail("data.horizon: horizons must be positive");
  }
  if (s.seeds.empty()) fail("train.seeds: at least one seed required");
  if (s.lookback == 0 || s.stride == 0) fail("data.lookback and data.stride must be positive");
  if (!(s.few_shot_fraction > 0.0 && s.few_shot_fraction <= 1.0)) fail("data.few_shot_fraction must lie in (0, 1]");
  if (s.split.train <= 0.0 || s.split.val <= 0.0 || s.split.test <= 0.0) fail("data.split: fractions must be positive");
  if (std::abs(s.split.train + s.split.val + s.split.test - 1.0) > 1e-9) fail("data.split: fractions must sum to 1");
  const auto& m = s.model;
  if (m.patch.patch_len == 0 || m.patch.stride == 0 || m.patch.patch_len > s.lookback) {
    fail("fusion.patch_len must lie in [1, data.lookback] and fusion.stride must be positive");
  }
  if (m.dim == 0 || m.fusion_heads == 0 || m.dim % m.fusion_heads != 0) fail("fusion.heads must divide model.dim");
  if (m.backbone_heads == 0 || m.dim % m.backbone_heads != 0) fail("backbone.heads must divide model.dim");
  if (m.pool.pool_size == 0 || m.pool.soft_len == 0 || m.pool.top_k == 0) {
    fail("prompt.pool_size, prompt.soft_len and prompt.top_k must be positive");
  }
  if (m.pool.top_k > m.pool.pool_size) fail("prompt.top_k exceeds prompt.pool_size");
  if (m.hard_len == 0) fail("prompt.hard_len must be positive");
  if (m.lora.rank == 0) fail("lora.rank must be positive");
  if (m.lora.dropout < 0.0 || m.lora.dropout >= 1.0) fail("lora.dropout must lie in [0, 1)");
  if (m.head_dim == 0 || m.backbone_layers == 0 || m.ffn_mult == 0) fail("head.dim, backbone sizes must be positive");
  const auto& t = s.train;
  if (t.lr_max < 0.0) fail("train.lr_max must be >= 0");
  if (t.batch == 0 || t.epochs == 0 || t.patience == 0) fail("train.batch, train.epochs, train.patience must be positive");
  if (t.patience > t.epochs) fail("train.patience exceeds train.epochs");
  if (!(t.pct_start > 0.0 && t.pct_start < 1.0)) fail("train.pct_start must lie in (0, 1)");
  if (t.div_factor <= 0.0 || t.final_div <= 0.0) fail("train.div_factor and train.final_div must be positive");
  if (t.early_stop_metric != "mse" && t.early_stop_metric != "mae") fail("train.early_stop_metric must be mse or mae");
  if (s.eval_batch == 0) fail("eval.batch must be positive");
  if (s.run_id.empty() || s.run_id.find('/') != std::string::npos) fail("run.id must be a non-empty name");
}

std::vector<Aggregate> MetricsTable::by_horizon() const {
  std::vector<Aggregate> out;
  std::vector<std::vector<const MetricsRow*>> groups;
  for (const auto& r : rows_) {
    auto it = std::find_if(out.begin(), out.end(), [&](const Aggregate& a) {
      return a.dataset == r.dataset && a.ablation == r.ablation && a.horizon == r.horizon;
    });
    if (it == out.end()) {
      out.push_back({r.dataset, r.ablation, r.horizon});
      groups.emplace_back();
      it = out.end() - 1;
    }
    groups[static_cast<std::size_t>(it - out.begin())].push_back(&r);
  }
  for (std::size_t g = 0; g < out.size(); ++g) {
    std::vector<double> mse;
    std::vector<double> mae;
    for (const auto* r : groups[g]) {
      mse.push_back(r->mse);
      mae.push_back(r->mae);
    }
    out[g].count = mse.size();
    mean_std(mse, out[g].mse_mean, out[g].mse_std);
    mean_std(mae, out[g].mae_mean, out[g].mae_std);
  }
  return out;
}

std::vector<Aggregate> MetricsTable::by_ablation() const {
  std::vector<Aggregate> out;
  std::vector<std::size_t> horizons;
  for (const auto& h : by_horizon()) {
    auto it = std::find_if(out.begin(), out.end(),
                           [&](const Aggregate& a) { return a.dataset == h.dataset && a.ablation == h.ablation; });
    if (it == out.end()) {
      out.push_back({h.dataset, h.ablation, 0});
      horizons.push_back(0);
      it = out.end() - 1;
    }
    const auto i = static_cast<std::size_t>(it - out.begin());
    it->count += h.count;
    it->mse_mean += h.mse_mean;
    it->mse_std += h.mse_std;
    it->mae_mean += h.mae_mean;
    it->mae_std += h.mae_std;
    ++horizons[i];
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double n = static_cast<double>(horizons[i]);
    out[i].mse_mean /= n;
    out[i].mse_std /= n;
    out[i].mae_mean /= n;
    out[i].mae_std /= n;
  }
  return out;
}

std::string MetricsTable::to_csv() const {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows_) {
    out += r.dataset + "," + r.ablation + "," + num(static_cast<std::uint64_t>(r.horizon)) + "," + num(r.seed) + "," +
           num(r.mse) + "," + num(r.mae) + "," + num(r.persistence_mse) + "," + num(r.persistence_mae) + "," +
           num(static_cast<std::uint64_t>(r.best_epoch)) + "," + num(static_cast<std::uint64_t>(r.epochs_run)) + "\n";
  }
  return out;
}

MetricsTable MetricsTable::from_csv(std::istream& in) {
  MetricsTable t;
  std::string line;
  if (!std::getline(in, line) || trim(line) != kMetricsHeader) {
    throw ParseError("metrics.csv: missing or unexpected header");
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto c = split_list(line);
    if (c.size() != 10) throw ParseError("metrics.csv row " + std::to_string(line_no) + ": expected 10 columns");
    try {
      MetricsRow r;
      r.dataset = c[0];
      r.ablation = c[1];
      r.horizon = parse_uint("horizon", c[2]);
      r.seed = parse_uint("seed", c[3]);
      r.mse = parse_double("mse", c[4]);
      r.mae = parse_double("mae", c[5]);
      r.persistence_mse = parse_double("persistence_mse", c[6]);
      r.persistence_mae = parse_double("persistence_mae", c[7]);
      r.best_epoch = parse_uint("best_epoch", c[8]);
      r.epochs_run = parse_uint("epochs_run", c[9]);
      t.add(std::move(r));
    } catch (const ConfigError& e) {
      throw ParseError("metrics.csv row " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return t;
}

std::string format_mean_std(double mean, double std, int precision) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(precision) << mean << "±" << std;
  return out.str();
}

LoadedData load_experiment_data(const ExperimentSpec& spec, std::size_t horizon, std::uint64_t seed) {
  LoadedData d;
  if (spec.data_path.empty()) {
    d.raw = make_synthetic(spec.synth);
  } else {
    LoadOptions opt;
    opt.forward_fill = spec.forward_fill;
    d.raw = load_series(spec.data_path, opt);
  }
  const auto ranges = chronological_split(d.raw.rows(), spec.split, spec.lookback + horizon);
  auto [scaler, scaled] = fit_transform(d.raw, ranges.train);
  d.scaler = std::move(scaler);
  d.windows = make_windows(scaled, ranges, WindowConfig{spec.lookback, horizon, spec.stride});
  if (spec.few_shot_fraction < 1.0) {
    d.windows.train =
        few_shot_subsample(d.windows.train, spec.few_shot_fraction, derive_seed(seed, 200), spec.few_shot_mode);
  }
  return d;
}

std::string cell_name(std::size_t horizon, std::uint64_t seed) {
  return "h" + std::to_string(horizon) + "_s" + std::to_string(seed);
}

namespace {

ModelConfig cell_model(const ExperimentSpec& spec, std::size_t horizon, std::uint64_t seed) {
  ModelConfig mc = spec.model;
  mc.lookback = spec.lookback;
  mc.horizon = horizon;
  mc.seed = seed;
  return mc;
}

std::string preds_csv(const EvalResult& eval, const std::vector<std::string>& names, std::size_t lookback) {
  std::string out = "origin,variable,step,truth,prediction\n";
  for (const auto& p : eval.predictions) {
    out += num(static_cast<std::uint64_t>(p.origin + lookback)) + "," + names.at(p.variable) + "," +
           num(static_cast<std::uint64_t>(p.step)) + "," + num(p.truth) + "," + num(p.prediction) + "\n";
  }
  return out;
}

}  // namespace

CellOutput run_cell(const ExperimentSpec& spec, std::size_t horizon, std::uint64_t seed, const std::string& cell_dir) {
  const LoadedData data = load_experiment_data(spec, horizon, seed);
  const ModelConfig mc = cell_model(spec, horizon, seed);
  TrainConfig tc = spec.train;
  tc.seed = seed;

  TimePromptModel model(mc);
  const auto& names = data.raw.variable_names;
  const PreparedSet train_set = prepare_windows(data.windows.train, names, spec.dataset, mc, model.tokenizer());
  const PreparedSet val_set = prepare_windows(data.windows.val, names, spec.dataset, mc, model.tokenizer());
  const PreparedSet test_set = prepare_windows(data.windows.test, names, spec.dataset, mc, model.tokenizer());

  CellOutput cell;
  cell.training = train(model, train_set, val_set, tc);
  const Scaler* denorm = spec.denormalize ? &data.scaler : nullptr;
  cell.test = evaluate(model, test_set, spec.eval_batch, denorm, !cell_dir.empty());
  const Metrics persistence = persistence_metrics(data.windows.test, denorm);

  MetricsRow& row = cell.row;
  row.dataset = spec.dataset;
  row.ablation = mc.ablate.label();
  row.horizon = horizon;
  row.seed = seed;
  row.mse = cell.test.metrics.mse;
  row.mae = cell.test.metrics.mae;
  row.persistence_mse = persistence.mse;
  row.persistence_mae = persistence.mae;
  row.best_epoch = cell.training.best_epoch;
  row.epochs_run = cell.training.epochs.size();

  if (!cell_dir.empty()) {
    fs::create_directories(cell_dir);
    const fs::path dir(cell_dir);
    std::string trace = "step,lr,loss\n";
    for (const auto& t : cell.training.trace) {
      trace += num(static_cast<std::uint64_t>(t.step)) + "," + num(t.lr) + "," + num(t.loss) + "\n";
    }
    write_text((dir / "trace.csv").string(), trace);
    std::string epochs = "epoch,train_loss,val_mse,val_mae\n";
    for (const auto& e : cell.training.epochs) {
      epochs += num(static_cast<std::uint64_t>(e.epoch)) + "," + num(e.train_loss) + "," + num(e.val_mse) + "," +
                num(e.val_mae) + "\n";
    }
    write_text((dir / "epochs.csv").string(), epochs);
    save_checkpoint((dir / "best.ckpt").string(), model.trainable_parameters());
    write_text((dir / "preds.csv").string(), preds_csv(cell.test, names, spec.lookback));
  }
  return cell;
}

ExperimentResult run_experiment(const ExperimentSpec& spec, const std::string& out_dir) {
  return run_grid(spec, {{spec.model.ablate.label(), spec}}, out_dir, false);
}

std::vector<AblationFlags> ablation_suite() {
  std::vector<AblationFlags> out(5);
  out[1].no_sp = true;
  out[2].no_hp = true;
  out[3].no_cma = true;
  out[4].no_lora = true;
  return out;
}

ExperimentResult run_ablation(const ExperimentSpec& spec, const std::string& out_dir) {
  std::vector<Variant> variants;
  for (const auto& flags : ablation_suite()) {
    Variant v{flags.label(), spec};
    v.spec.model.ablate = flags;
    variants.push_back(std::move(v));
  }
  return run_grid(spec, variants, out_dir, true);
}

std::vector<SweepCell> sweep_grid() {
  std::vector<SweepCell> out;
  for (const char* factor : {"soft_len", "hard_len"}) {
    for (std::size_t v : {3, 5, 10, 15}) out.push_back({factor, v});
  }
  for (std::size_t v : {10, 50, 100, 200}) out.push_back({"pool_size", v});
  for (std::size_t v : {1, 3, 5, 10}) out.push_back({"top_k", v});
  return out;
}

void apply_sweep_cell(ModelConfig& model, const SweepCell& cell) {
  if (cell.factor == "soft_len") model.pool.soft_len = cell.value;
  else if (cell.factor == "hard_len") model.hard_len = cell.value;
  else if (cell.factor == "pool_size") model.pool.pool_size = cell.value;
  else if (cell.factor == "top_k") model.pool.top_k = cell.value;
  else throw ConfigError("sweep: unknown factor '" + cell.factor + "'");
}

ExperimentResult run_sweep(const ExperimentSpec& spec, const std::string& out_dir) {
  std::vector<Variant> variants;
  for (const auto& cell : sweep_grid()) {
    Variant v{cell.factor + "=" + std::to_string(cell.value), spec};
    apply_sweep_cell(v.spec.model, cell);
    variants.push_back(std::move(v));
  }
  return run_grid(spec, variants, out_dir, true);
}

void load_trainable(TimePromptModel& model, const std::vector<NamedTensor>& saved) {
  auto params = model.trainable_parameters();
  if (params.size() != saved.size()) {
    throw DimensionError("checkpoint holds " + std::to_string(saved.size()) + " tensors, model expects " +
                         std::to_string(params.size()));
  }
  for (auto& p : params) {
    auto it = std::find_if(saved.begin(), saved.end(), [&](const NamedTensor& s) { return s.name == p.name; });
    if (it == saved.end()) throw DimensionError("checkpoint lacks tensor " + p.name);
    if (it->tensor.shape() != p.tensor.shape()) {
      throw DimensionError("checkpoint tensor " + p.name + " has shape " + shape_str(it->tensor.shape()) +
                           ", expected " + shape_str(p.tensor.shape()));
    }
    std::copy(it->tensor.data().begin(), it->tensor.data().end(), p.tensor.mutable_data().begin());
  }
}

EvalResult evaluate_checkpoint(const ExperimentSpec& spec, std::size_t horizon, std::uint64_t seed,
                               const std::string& checkpoint) {
  const LoadedData data = load_experiment_data(spec, horizon, seed);
  const ModelConfig mc = cell_model(spec, horizon, seed);
  TimePromptModel model(mc);
  load_trainable(model, load_checkpoint(checkpoint));
  const PreparedSet test_set =
      prepare_windows(data.windows.test, data.raw.variable_names, spec.dataset, mc, model.tokenizer());
  return evaluate(model, test_set, spec.eval_batch, spec.denormalize ? &data.scaler : nullptr, true);
}

std::size_t dump_hard_prompts(const ExperimentSpec& spec, std::size_t horizon, const std::string& path) {
  const LoadedData data = load_experiment_data(spec, horizon, spec.seeds.front());
  std::string body;
  std::size_t lines = 0;
  for (const auto& w : data.windows.train) {
    for (std::size_t v = 0; v < w.vars; ++v) {
      const auto column = w.lookback_column(v);
      const PromptMeta meta{spec.dataset, data.raw.variable_names[v], horizon};
      std::string text = render_hard_prompt(compute_statistics(column, spec.model.stats), column, meta);
      for (std::size_t at = text.find('\n'); at != std::string::npos; at = text.find('\n', at)) {
        text.replace(at, 1, " | ");
      }
      body += std::to_string(w.origin) + "\t" + meta.variable + "\t" + text + "\n";
      ++lines;
    }
  }
  write_text(path, body);
  return lines;
}

std::string render_summary(const MetricsTable& table, const ExperimentSpec& spec,
                           const std::vector<CellFailure>& failures) {
  std::ostringstream out;
  out << "dataset: " << spec.dataset << "\n";
  out << "scale: " << (spec.denormalize ? "original units (eval.denormalize=true)" : "normalized (eval.denormalize=false)")
      << "\n";
  out << "seeds: " << join(spec.seeds) << "\n";
  out << "few-shot fraction: " << num(spec.few_shot_fraction) << "\n\n";

  out << "per horizon, mean±std over seeds\n";
  out << pad("config", 18) << pad("horizon", 9) << pad("MSE", 17) << pad("MAE", 17) << "\n";
  for (const auto& a : table.by_horizon()) {
    out << pad(a.ablation, 18) << pad(std::to_string(a.horizon), 9) << pad(format_mean_std(a.mse_mean, a.mse_std), 17)
        << pad(format_mean_std(a.mae_mean, a.mae_std), 17) << "\n";
  }
  out << "\naveraged over horizons\n";
  out << pad("config", 18) << pad("MSE", 17) << pad("MAE", 17) << "\n";
  for (const auto& a : table.by_ablation()) {
    out << pad(a.ablation, 18) << pad(format_mean_std(a.mse_mean, a.mse_std), 17)
        << pad(format_mean_std(a.mae_mean, a.mae_std), 17) << "\n";
  }

  std::vector<double> pm;
  std::vector<double> pa;
  for (const auto& r : table.rows()) {
    if (r.ablation == table.rows().front().ablation) {
      pm.push_back(r.persistence_mse);
      pa.push_back(r.persistence_mae);
    }
  }
  if (!pm.empty()) {
    double m1, s1, m2, s2;
    mean_std(pm, m1, s1);
    mean_std(pa, m2, s2);
    out << "\npersistence baseline: MSE " << format_mean_std(m1, s1) << "  MAE " << format_mean_std(m2, s2) << "\n";
  }
  out << "\nfailed cells: " << (failures.empty() ? "none" : std::to_string(failures.size())) << "\n";
  for (const auto& f : failures) out << "  " << f.cell << ": " << f.message << "\n";
  return out.str();
}

std::string output_root() {
  const char* env = std::getenv("TIMEPROMPT_OUT");
  return env && *env ? env : "runs";
}

void write_text(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << body;
  if (!out) throw std::runtime_error("short write to '" + path + "'");
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + path + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace timeprompt
