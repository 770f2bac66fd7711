#include "timeprompt/model.hpp"

#include <stdexcept>

namespace timeprompt {

namespace {

enum Stream : std::uint64_t { kPatch = 1, kReprogram, kPool, kAlignSoft, kAlignHard, kHead, kVocab };

}  // namespace

std::string AblationFlags::label() const {
  std::string s;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!s.empty()) s += '+';
    s += name;
  };
  add(no_sp, "no_sp");
  add(no_hp, "no_hp");
  add(no_cma, "no_cma");
  add(no_lora, "no_lora");
  return s.empty() ? "full" : s;
}

TimePromptModel::TimePromptModel(const ModelConfig& cfg)
    : cfg_(cfg), tokenizer_(cfg.dim, derive_seed(cfg.backbone_seed, kVocab)) {
  if (cfg.hard_len == 0) throw std::invalid_argument("model: hard prompt length must be >= 1");
  const std::uint64_t s = cfg.seed;
  patch_ = PatchEmbedding(cfg.patch, cfg.lookback, cfg.dim, derive_seed(s, kPatch));
  reprogram_ = MultiHeadCrossAttention(cfg.dim, cfg.fusion_heads, derive_seed(s, kReprogram));
  if (soft_active()) {
    pool_ = PromptPool(cfg.pool, cfg.dim, derive_seed(s, kPool));
    align_soft_ = MultiHeadCrossAttention(cfg.dim, cfg.fusion_heads, derive_seed(s, kAlignSoft));
  }
  if (hard_active()) align_hard_ = MultiHeadCrossAttention(cfg.dim, cfg.fusion_heads, derive_seed(s, kAlignHard));
  BackboneConfig bc;
  bc.layers = cfg.backbone_layers;
  bc.dim = cfg.dim;
  bc.heads = cfg.backbone_heads;
  bc.ffn_mult = cfg.ffn_mult;
  bc.seed = cfg.backbone_seed;
  bc.use_lora = !cfg.ablate.no_lora;
  bc.lora = cfg.lora;
  backbone_ = Backbone(bc);
  head_ = ForecastHead(cfg.dim, cfg.head_dim, patch_.num_patches(), cfg.horizon, derive_seed(s, kHead));
}

void TimePromptModel::set_training(bool training) {
  training_ = training;
  backbone_.set_training(training);
}

ForwardOutput TimePromptModel::forward(const Batch& batch, Rng* rng) const {
  const std::size_t b = batch.windows;
  const std::size_t n = batch.vars;
  const std::size_t m = patch_.num_patches();
  const std::size_t d = cfg_.dim;
  if (batch.series.shape() != Shape{b, n, cfg_.lookback}) {
    throw DimensionError("model: series batch " + shape_str(batch.series.shape()) + " does not match config");
  }
  ForwardOutput out;
  out.patches = patch_.forward(batch.series);
  out.reprogrammed = reprogram(out.patches, tokenizer_.table(), reprogram_);

  Tensor fused = out.reprogrammed;
  if (!cfg_.ablate.no_cma) {
    Tensor z_soft;
    Tensor z_hard;
    if (soft_active()) {
      Tensor pooled = pool_patches(out.patches);
      Tensor scores = compute_similarity(pooled, pool_.keys);
      out.selected = select_top_k(scores, cfg_.pool.top_k);
      out.soft_prompt = gather_prompts(pool_.values, out.selected);
      out.surrogate = scale(mean_all(gather_scores(scores, out.selected)), -1.0);
      z_soft = align_soft_.forward(out.reprogrammed, out.soft_prompt);
    }
    if (hard_active()) {
      if (batch.hard_ids.size() != b * n * cfg_.hard_len) {
        throw DimensionError("model: batch carries " + std::to_string(batch.hard_ids.size()) +
                             " hard prompt ids, expected " + std::to_string(b * n * cfg_.hard_len));
      }
      out.hard_prompt = reshape(tokenizer_.embed(batch.hard_ids), {b, n, cfg_.hard_len, d});
      z_hard = align_hard_.forward(out.reprogrammed, out.hard_prompt);
    }
    fused = fuse(out.reprogrammed, z_soft, z_hard, gate_);
  }
  out.backbone_input = reshape(fused, {b * n, m, d});
  Tensor hidden = backbone_.forward(out.backbone_input, rng);
  out.prediction = head_.forward(reshape(hidden, {b, n, m, d}));
  return out;
}

Tensor TimePromptModel::training_loss(const ForwardOutput& out, const Batch& batch) const {
  Tensor loss = mse_loss(out.prediction, batch.target);
  if (out.surrogate.defined()) loss = add(loss, scale(out.surrogate, cfg_.pool.key_surrogate_weight));
  return loss;
}

std::vector<NamedTensor> TimePromptModel::trainable_parameters() const {
  std::vector<NamedTensor> out;
  out.push_back({"patch.weight", patch_.weight});
  out.push_back({"patch.bias", patch_.bias});
  out.push_back({"patch.position", patch_.position});
  auto attn = [&](const std::string& prefix, const MultiHeadCrossAttention& a) {
    out.push_back({prefix + ".w_query", a.w_query});
    out.push_back({prefix + ".w_key", a.w_key});
    out.push_back({prefix + ".w_value", a.w_value});
    out.push_back({prefix + ".w_out", a.w_out});
  };
  attn("reprogram", reprogram_);
  if (soft_active()) {
    out.push_back({"pool.keys", pool_.keys});
    out.push_back({"pool.values", pool_.values});
    attn("align_soft", align_soft_);
  }
  if (hard_active()) attn("align_hard", align_hard_);
  if (soft_active() || hard_active()) out.push_back({"fusion.gate_logits", gate_.logits});
  for (auto& a : backbone_.adapter_parameters()) out.push_back(a);
  out.push_back({"head.local_weight", head_.local_weight});
  out.push_back({"head.local_bias", head_.local_bias});
  out.push_back({"head.fuse_weight", head_.fuse_weight});
  out.push_back({"head.fuse_bias", head_.fuse_bias});
  out.push_back({"head.out_weight", head_.out_weight});
  out.push_back({"head.out_bias", head_.out_bias});
  return out;
}

std::vector<NamedTensor> TimePromptModel::frozen_parameters() const {
  auto out = backbone_.base_parameters();
  out.push_back({"tokenizer.table", tokenizer_.table()});
  return out;
}

PreparedSet prepare_windows(std::vector<TimeWindow> windows, const std::vector<std::string>& variable_names,
                            const std::string& dataset, const ModelConfig& cfg, const Tokenizer& tok) {
  PreparedSet set;
  set.variable_names = variable_names;
  set.windows = std::move(windows);
  set.hard_ids.resize(set.windows.size());
  for (const auto& win : set.windows) {
    if (win.vars != variable_names.size()) throw DimensionError("prepare_windows: variable count mismatch");
  }
#pragma omp parallel for schedule(dynamic, 8)
  for (std::ptrdiff_t w = 0; w < static_cast<std::ptrdiff_t>(set.windows.size()); ++w) {
    const TimeWindow& win = set.windows[static_cast<std::size_t>(w)];
    std::vector<std::size_t> ids;
    ids.reserve(win.vars * cfg.hard_len);
    for (std::size_t v = 0; v < win.vars; ++v) {
      PromptMeta meta{dataset, variable_names[v], cfg.horizon};
      const auto column = win.lookback_column(v);
      const auto art = build_hard_prompt(column, meta, tok, cfg.hard_len, cfg.stats);
      ids.insert(ids.end(), art.retained_ids.begin(), art.retained_ids.end());
    }
    set.hard_ids[static_cast<std::size_t>(w)] = std::move(ids);
  }
  return set;
}

Batch make_batch(const PreparedSet& set, std::span<const std::size_t> indices, std::size_t hard_len) {
  if (indices.empty()) throw std::invalid_argument("make_batch: empty batch");
  const TimeWindow& first = set.windows.at(indices[0]);
  const std::size_t n = first.vars;
  const std::size_t t = first.lookback_len;
  const std::size_t h = first.horizon;
  const std::size_t b = indices.size();
  std::vector<double> series(b * n * t);
  std::vector<double> target(b * n * h);
  Batch batch;
  batch.windows = b;
  batch.vars = n;
  batch.hard_ids.reserve(b * n * hard_len);
  for (std::size_t i = 0; i < b; ++i) {
    const TimeWindow& w = set.windows.at(indices[i]);
    for (std::size_t v = 0; v < n; ++v) {
      for (std::size_t s = 0; s < t; ++s) series[(i * n + v) * t + s] = w.lookback_at(s, v);
      for (std::size_t s = 0; s < h; ++s) target[(i * n + v) * h + s] = w.target_at(s, v);
    }
    const auto& ids = set.hard_ids.at(indices[i]);
    if (ids.size() != n * hard_len) throw DimensionError("make_batch: prepared prompt length mismatch");
    batch.hard_ids.insert(batch.hard_ids.end(), ids.begin(), ids.end());
    batch.origins.push_back(w.origin);
  }
  batch.series = Tensor::constant({b, n, t}, std::move(series));
  batch.target = Tensor::constant({b, n, h}, std::move(target));
  return batch;
}

}  // namespace timeprompt
