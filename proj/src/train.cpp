#include "timeprompt/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace timeprompt {

namespace {

enum Stream : std::uint64_t { kShuffle = 101, kDropout };

double cos_anneal(double start, double end, double pct) {
  return end + (start - end) * 0.5 * (1.0 + std::cos(std::numbers::pi * pct));
}

void validate(const TrainConfig& cfg) {
  if (cfg.lr_max < 0.0 || !std::isfinite(cfg.lr_max)) throw std::invalid_argument("train: lr_max must be >= 0");
  if (cfg.batch == 0 || cfg.epochs == 0 || cfg.patience == 0) {
    throw std::invalid_argument("train: batch, epochs and patience must be positive");
  }
  if (cfg.patience > cfg.epochs) throw std::invalid_argument("train: patience exceeds epochs");
  if (!(cfg.pct_start > 0.0 && cfg.pct_start < 1.0)) throw std::invalid_argument("train: pct_start must be in (0, 1)");
  if (cfg.div_factor <= 0.0 || cfg.final_div <= 0.0) throw std::invalid_argument("train: divisors must be positive");
  if (cfg.early_stop_metric != "mse" && cfg.early_stop_metric != "mae") {
    throw std::invalid_argument("train: early_stop_metric must be mse or mae");
  }
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

std::string nonfinite_report(std::size_t step, const Tape& tape, const std::vector<NamedTensor>& params,
                             const char* what) {
  std::ostringstream msg;
  msg << "train: non-finite " << what << " at step " << step;
  if (const char* op = tape.first_nonfinite_op()) msg << "; first non-finite op: " << op;
  for (const auto& p : params) {
    if (!all_finite(p.tensor.data())) {
      msg << "; first non-finite parameter: " << p.name;
      break;
    }
    if (p.tensor.has_grad() && !all_finite(p.tensor.grad())) {
      msg << "; first non-finite gradient: " << p.name;
      break;
    }
  }
  return msg.str();
}

std::vector<std::vector<double>> snapshot(const std::vector<NamedTensor>& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

}  // namespace

double onecycle_lr(std::size_t step, std::size_t total_steps, const TrainConfig& cfg) {
  if (step >= total_steps) {
    throw std::out_of_range("onecycle_lr: step " + std::to_string(step) + " outside [0, " +
                            std::to_string(total_steps) + ")");
  }
  const double initial = cfg.lr_max / cfg.div_factor;
  const double floor = cfg.lr_max / cfg.final_div;
  const double peak = cfg.pct_start * static_cast<double>(total_steps);
  const double s = static_cast<double>(step);
  if (s <= peak) return cos_anneal(initial, cfg.lr_max, peak > 0.0 ? s / peak : 1.0);
  const double span = static_cast<double>(total_steps - 1) - peak;
  return cos_anneal(cfg.lr_max, floor, span > 0.0 ? std::min(1.0, (s - peak) / span) : 1.0);
}

Adam::Adam(std::vector<NamedTensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    if (!p.tensor.requires_grad()) throw std::invalid_argument("adam: frozen tensor " + p.name + " in parameter list");
    m_.emplace_back(p.tensor.size(), 0.0);
    v_.emplace_back(p.tensor.size(), 0.0);
  }
}

void Adam::step(double lr) {
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) throw GraphError("adam: parameter " + p.name + " has no gradient");
  }
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(cfg_.beta1, t);
  const double c2 = 1.0 - std::pow(cfg_.beta2, t);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& tensor = params_[i].tensor;
    auto g = tensor.grad();
    auto w = tensor.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg_.eps);
    }
    tensor.clear_grad();
  }
}

double clip_grad_norm(const std::vector<NamedTensor>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / (norm + 1e-12);
    for (const auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      Tensor t = p.tensor;
      for (double& g : t.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

TrainResult train(TimePromptModel& model, const PreparedSet& train_set, const PreparedSet& val_set,
                  const TrainConfig& cfg, const TrainHooks& hooks) {
  validate(cfg);
  if (train_set.size() == 0) throw std::invalid_argument("train: empty training set");
  if (val_set.size() == 0) throw std::invalid_argument("train: empty validation set");

  const std::size_t hard_len = model.config().hard_len;
  const auto params = model.trainable_parameters();
  Adam opt(params);
  Rng shuffle_rng(derive_seed(cfg.seed, kShuffle));
  Rng dropout_rng(derive_seed(cfg.seed, kDropout));

  const std::size_t per_epoch = (train_set.size() + cfg.batch - 1) / cfg.batch;
  const std::size_t total = per_epoch * cfg.epochs;

  TrainResult result;
  result.trace.reserve(total);
  std::vector<std::vector<double>> best = snapshot(params);
  double best_score = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  std::size_t step = 0;

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    model.set_training(true);
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t first = 0; first < order.size(); first += cfg.batch) {
      const std::size_t last = std::min(order.size(), first + cfg.batch);
      const Batch batch = make_batch(train_set, std::span(order).subspan(first, last - first), hard_len);
      Tape tape;
      const ForwardOutput out = model.forward(batch, &dropout_rng);
      const Tensor loss = model.training_loss(out, batch);
      const double value = loss.item();
      if (!std::isfinite(value)) throw TrainingError(nonfinite_report(step, tape, params, "loss"));
      tape.backward(loss);
      for (const auto& p : params) {
        if (p.tensor.has_grad() && !all_finite(p.tensor.grad())) {
          throw TrainingError(nonfinite_report(step, tape, params, "gradient"));
        }
      }
      clip_grad_norm(params, cfg.clip_norm);
      const double lr = onecycle_lr(step, total, cfg);
      opt.step(lr);
      result.trace.push_back({step, epoch, lr, value});
      loss_sum += value;
      if (hooks.after_step) hooks.after_step(step, model);
      ++step;
    }

    const EvalResult val = evaluate(model, val_set, cfg.batch);
    EpochRecord rec{epoch, loss_sum / static_cast<double>(per_epoch), val.metrics.mse, val.metrics.mae};
    result.epochs.push_back(rec);
    const double score = cfg.early_stop_metric == "mae" ? rec.val_mae : rec.val_mse;
    if (score < best_score) {
      best_score = score;
      result.best_epoch = epoch;
      best = snapshot(params);
      stale = 0;
    } else if (++stale >= cfg.patience) {
      result.early_stopped = true;
      break;
    }
  }

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].tensor;
    std::copy(best[i].begin(), best[i].end(), t.mutable_data().begin());
  }
  result.best_val = best_score;
  model.set_training(false);
  return result;
}

EvalResult evaluate(TimePromptModel& model, const PreparedSet& set, std::size_t batch, const Scaler* denormalize,
                    bool keep_predictions) {
  if (set.size() == 0) throw std::invalid_argument("evaluate: empty window set");
  if (batch == 0) throw std::invalid_argument("evaluate: batch must be positive");
  const bool was_training = model.training();
  model.set_training(false);
  NoGradGuard guard;

  const std::size_t hard_len = model.config().hard_len;
  std::vector<double> pred;
  std::vector<double> truth;
  EvalResult result;
  std::vector<std::size_t> idx;
  for (std::size_t first = 0; first < set.size(); first += batch) {
    const std::size_t last = std::min(set.size(), first + batch);
    idx.resize(last - first);
    std::iota(idx.begin(), idx.end(), first);
    const Batch b = make_batch(set, idx, hard_len);
    const ForwardOutput out = model.forward(b);
    const auto p = out.prediction.data();
    const auto y = b.target.data();
    const std::size_t n = b.vars;
    const std::size_t h = p.size() / (b.windows * n);
    for (std::size_t i = 0; i < b.windows; ++i) {
      for (std::size_t v = 0; v < n; ++v) {
        for (std::size_t s = 0; s < h; ++s) {
          const std::size_t at = (i * n + v) * h + s;
          double pv = p[at];
          double yv = y[at];
          if (denormalize) {
            pv = denormalize->inverse(pv, v);
            yv = denormalize->inverse(yv, v);
          }
          pred.push_back(pv);
          truth.push_back(yv);
          if (keep_predictions) result.predictions.push_back({b.origins[i], v, s, yv, pv});
        }
      }
    }
  }
  result.metrics = compute_metrics(pred, truth);
  model.set_training(was_training);
  return result;
}

Metrics persistence_metrics(const std::vector<TimeWindow>& windows, const Scaler* denormalize) {
  std::vector<double> pred;
  std::vector<double> truth;
  for (const auto& w : windows) {
    for (std::size_t v = 0; v < w.vars; ++v) {
      double last = w.lookback_at(w.lookback_len - 1, v);
      if (denormalize) last = denormalize->inverse(last, v);
      for (std::size_t s = 0; s < w.horizon; ++s) {
        pred.push_back(last);
        truth.push_back(denormalize ? denormalize->inverse(w.target_at(s, v), v) : w.target_at(s, v));
      }
    }
  }
  return compute_metrics(pred, truth);
}

}  // namespace timeprompt
