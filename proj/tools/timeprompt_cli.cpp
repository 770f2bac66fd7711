// timeprompt: synth | train | eval | ablate | sweep | report
//
// Every config key is also a flag (--data.horizon 96); flags override the
// --config file. Outputs go to <out>/<run.id>/ where <out> is --out, else
// $TIMEPROMPT_OUT, else ./runs.
//
// Exit codes: 0 success, 1 config error, 2 runtime or cell failure,
// 3 report gate failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "timeprompt/experiment.hpp"

namespace fs = std::filesystem;
using namespace timeprompt;

namespace {

constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;
constexpr int kGateFailure = 3;

struct Overrides {
  std::string config_path;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App& app) {
    app.add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
    for (const auto& key : config_keys()) {
      options[key] = app.add_option("--" + key, values[key], "config key " + key)->group("Config keys");
    }
  }

  // Config file first, then flags.
  ExperimentSpec resolve(ExperimentSpec spec = {}) const {
    if (!config_path.empty()) apply_config(spec, read_config(config_path));
    std::map<std::string, std::string> given;
    for (const auto& [key, opt] : options) {
      if (opt->count() > 0) given[key] = values.at(key);
    }
    apply_config(spec, given);
    validate_spec(spec);
    return spec;
  }
};

std::string run_dir(const std::string& out, const ExperimentSpec& spec) {
  return (fs::path(out.empty() ? output_root() : out) / spec.run_id).string();
}

int finish(const ExperimentResult& result) {
  std::cout << read_text((fs::path(result.out_dir) / "summary.txt").string());
  std::cout << "outputs: " << result.out_dir << "\n";
  return result.failures.empty() ? 0 : kRuntimeError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompt-fused time-series forecasting on a small frozen backbone"};
  app.require_subcommand(1);
  app.fallthrough();
  Overrides ov;
  ov.attach(app);
  std::string out;
  app.add_option("--out", out, "output root (default $TIMEPROMPT_OUT or ./runs)");

  auto* synth = app.add_subcommand("synth", "write the synthetic sine + trend dataset as CSV");
  std::string synth_path;
  synth->add_option("-o,--output", synth_path, "CSV path (default <out>/synthetic.csv)");

  auto* train_cmd = app.add_subcommand("train", "train and test every horizon x seed cell");
  std::string dump_path;
  train_cmd->add_option("--dump-prompts", dump_path, "also write each training window's hard prompt, one per line");
  auto* ablate = app.add_subcommand("ablate", "run the five-configuration ablation table");
  auto* sweep = app.add_subcommand("sweep", "one-factor sweep over soft/hard prompt length, pool size, top-k");

  auto* eval = app.add_subcommand("eval", "score a trained cell's best checkpoint on the test split");
  std::string eval_run;
  std::size_t eval_horizon = 0;
  std::uint64_t eval_seed = 0;
  eval->add_option("--run", eval_run, "run directory holding manifest.txt")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--horizon", eval_horizon, "cell horizon (default: first in manifest)");
  eval->add_option("--seed", eval_seed, "cell seed (default: first in manifest)");
  std::string eval_ckpt;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint path (default <run>/h<H>_s<seed>/best.ckpt)");

  auto* report = app.add_subcommand("report", "rebuild summary.txt from a run's metrics.csv");
  std::string report_run;
  double min_gain = -1.0;
  report->add_option("--run", report_run, "run directory")->required()->check(CLI::ExistingDirectory);
  report->add_option("--min-gain", min_gain,
                     "gate: every config's mean MSE must be at least this fraction below persistence (exit 3)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kConfigError;
  }

  try {
    if (*synth) {
      const ExperimentSpec spec = ov.resolve();
      const std::string path =
          synth_path.empty() ? (fs::path(out.empty() ? output_root() : out) / "synthetic.csv").string() : synth_path;
      if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
      write_series(make_synthetic(spec.synth), path);
      std::cout << path << "\n";
      return 0;
    }
    if (*train_cmd) {
      const ExperimentSpec spec = ov.resolve();
      if (!dump_path.empty()) {
        const std::size_t n = dump_hard_prompts(spec, spec.horizons.front(), dump_path);
        std::cout << "wrote " << n << " hard prompts to " << dump_path << "\n";
      }
      return finish(run_experiment(spec, run_dir(out, spec)));
    }
    if (*ablate) {
      const ExperimentSpec spec = ov.resolve();
      return finish(run_ablation(spec, run_dir(out, spec)));
    }
    if (*sweep) {
      const ExperimentSpec spec = ov.resolve();
      return finish(run_sweep(spec, run_dir(out, spec)));
    }
    if (*eval) {
      ExperimentSpec spec;
      apply_config(spec, read_config((fs::path(eval_run) / "manifest.txt").string()));
      spec = ov.resolve(spec);
      const std::size_t h = eval_horizon ? eval_horizon : spec.horizons.front();
      const std::uint64_t seed = eval->count("--seed") ? eval_seed : spec.seeds.front();
      std::string ckpt = eval_ckpt;
      if (ckpt.empty()) {
        const std::string label = spec.model.ablate.label();
        fs::path cell = fs::path(eval_run) / cell_name(h, seed);
        if (!fs::exists(cell)) cell = fs::path(eval_run) / label / cell_name(h, seed);
        ckpt = (cell / "best.ckpt").string();
      }
      const EvalResult res = evaluate_checkpoint(spec, h, seed, ckpt);
      std::printf("%s horizon=%zu seed=%llu mse=%.6f mae=%.6f values=%zu\n", spec.dataset.c_str(), h,
                  static_cast<unsigned long long>(seed), res.metrics.mse, res.metrics.mae, res.metrics.count);
      return 0;
    }
    if (*report) {
      ExperimentSpec spec;
      apply_config(spec, read_config((fs::path(report_run) / "manifest.txt").string()));
      std::istringstream csv(read_text((fs::path(report_run) / "metrics.csv").string()));
      const MetricsTable table = MetricsTable::from_csv(csv);
      const std::string summary = render_summary(table, spec, {});
      write_text((fs::path(report_run) / "summary.txt").string(), summary);
      std::cout << summary;
      if (min_gain >= 0.0) {
        bool ok = !table.rows().empty();
        for (const auto& a : table.by_ablation()) {
          double pers = 0.0;
          std::size_t n = 0;
          for (const auto& r : table.rows()) {
            if (r.ablation == a.ablation && r.dataset == a.dataset) {
              pers += r.persistence_mse;
              ++n;
            }
          }
          pers /= static_cast<double>(n);
          const bool pass = a.mse_mean <= (1.0 - min_gain) * pers;
          std::printf("gate %s: mse %.4f vs persistence %.4f -> %s\n", a.ablation.c_str(), a.mse_mean, pers,
                      pass ? "PASS" : "FAIL");
          ok = ok && pass;
        }
        return ok ? 0 : kGateFailure;
      }
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return 0;
}
