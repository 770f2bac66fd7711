#include "timeprompt/backbone.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <stdexcept>

namespace timeprompt {

namespace {

constexpr double kInitStd = 0.02;
// Additive mask value; exp() of it underflows to exactly zero.
constexpr double kMasked = -1e30;

Tensor frozen(Shape shape, std::vector<double> data) { return Tensor::constant(std::move(shape), std::move(data)); }

}  // namespace

LoraLinear::LoraLinear(std::size_t in, std::size_t out, const LoraConfig& cfg, bool adapter, Rng& rng)
    : cfg_(cfg), adapter_(adapter) {
  weight = frozen({out, in}, rng.normal_vector(out * in, 0.0, kInitStd));
  bias = frozen({out}, std::vector<double>(out, 0.0));
  if (adapter_) {
    if (cfg.rank == 0) throw std::invalid_argument("lora: rank must be positive");
    if (cfg.dropout < 0.0 || cfg.dropout >= 1.0) throw std::invalid_argument("lora: dropout must lie in [0, 1)");
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    lora_a = Tensor::parameter({cfg.rank, in}, rng.uniform_vector(cfg.rank * in, -bound, bound));
    lora_b = Tensor::parameter({out, cfg.rank}, std::vector<double>(out * cfg.rank, 0.0));
  }
}

Tensor LoraLinear::forward(const Tensor& x, Rng* rng) const {
  Tensor y = add(matmul(x, transpose(weight, 0, 1)), bias);
  if (!adapter_) return y;
  Tensor input = x;
  if (training_ && cfg_.dropout > 0.0) {
    if (rng == nullptr) throw std::invalid_argument("lora: training-mode forward needs a dropout generator");
    input = dropout(x, cfg_.dropout, rng->next_u64(), true);
  }
  Tensor delta = matmul(matmul(input, transpose(lora_a, 0, 1)), transpose(lora_b, 0, 1));
  return add(y, scale(delta, scaling()));
}

Tensor LoraLinear::merged_weight() const {
  if (training_) throw std::logic_error("merge_lora: adapter is in training mode; dropout breaks the merge");
  NoGradGuard no_grad;
  if (!adapter_) return weight.detach();
  return add(weight, scale(matmul(lora_b, lora_a), scaling())).detach();
}

Tensor merge_lora(const LoraLinear& layer) { return layer.merged_weight(); }

Backbone::Backbone(const BackboneConfig& cfg) : cfg_(cfg) {
  if (cfg.heads == 0 || cfg.dim % cfg.heads != 0) {
    throw std::invalid_argument("backbone: dimension must be divisible by heads");
  }
  if (cfg.layers == 0 || cfg.ffn_mult == 0) throw std::invalid_argument("backbone: layers and ffn_mult must be positive");
  Rng rng(cfg.seed);
  const std::size_t d = cfg.dim;
  const std::size_t f = cfg.dim * cfg.ffn_mult;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    Block b;
    b.ln1_gamma = frozen({d}, std::vector<double>(d, 1.0));
    b.ln1_beta = frozen({d}, std::vector<double>(d, 0.0));
    b.query = LoraLinear(d, d, cfg.lora, cfg.use_lora, rng);
    b.key = LoraLinear(d, d, cfg.lora, false, rng);
    b.value = LoraLinear(d, d, cfg.lora, cfg.use_lora, rng);
    b.out = LoraLinear(d, d, cfg.lora, false, rng);
    b.ln2_gamma = frozen({d}, std::vector<double>(d, 1.0));
    b.ln2_beta = frozen({d}, std::vector<double>(d, 0.0));
    b.fc_in = LoraLinear(d, f, cfg.lora, false, rng);
    b.fc_out = LoraLinear(f, d, cfg.lora, false, rng);
    blocks_.push_back(std::move(b));
  }
  lnf_gamma_ = frozen({d}, std::vector<double>(d, 1.0));
  lnf_beta_ = frozen({d}, std::vector<double>(d, 0.0));
}

void Backbone::set_training(bool training) {
  training_ = training;
  for (LoraLinear* a : linears()) a->set_training(training);
}

std::vector<LoraLinear*> Backbone::linears() {
  std::vector<LoraLinear*> out;
  for (auto& b : blocks_) {
    for (LoraLinear* l : {&b.query, &b.key, &b.value, &b.out, &b.fc_in, &b.fc_out}) out.push_back(l);
  }
  return out;
}

Tensor Backbone::attention(const Block& block, const Tensor& x, Rng* rng) const {
  const std::size_t g = x.dim(0);
  const std::size_t m = x.dim(1);
  const std::size_t h = cfg_.heads;
  const std::size_t hd = cfg_.dim / h;
  auto heads = [&](const Tensor& t) { return transpose(reshape(t, {g, m, h, hd}), 1, 2); };
  Tensor q = heads(block.query.forward(x, rng));
  Tensor k = heads(block.key.forward(x, rng));
  Tensor v = heads(block.value.forward(x, rng));
  std::vector<double> mask(m * m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) mask[i * m + j] = kMasked;
  }
  Tensor scores = scale(matmul(q, transpose(k, 2, 3)), 1.0 / std::sqrt(static_cast<double>(hd)));
  Tensor weights = softmax(add(scores, Tensor::constant({m, m}, std::move(mask))), 3);
  Tensor ctx = reshape(transpose(matmul(weights, v), 1, 2), {g, m, cfg_.dim});
  return block.out.forward(ctx, rng);
}

Tensor Backbone::forward(const Tensor& tokens, Rng* rng) const {
  if (tokens.rank() != 3 || tokens.dim(2) != cfg_.dim) {
    throw DimensionError("backbone: expected [G, M, " + std::to_string(cfg_.dim) + "], got " +
                         shape_str(tokens.shape()));
  }
  if (tokens.dim(1) == 0) throw DimensionError("backbone: no tokens");
  Tensor x = tokens;
  for (const auto& b : blocks_) {
    x = add(x, attention(b, layer_norm(x, b.ln1_gamma, b.ln1_beta), rng));
    Tensor hidden = gelu(b.fc_in.forward(layer_norm(x, b.ln2_gamma, b.ln2_beta), rng));
    x = add(x, b.fc_out.forward(hidden, rng));
  }
  return layer_norm(x, lnf_gamma_, lnf_beta_);
}

std::vector<NamedTensor> Backbone::base_parameters() const {
  std::vector<NamedTensor> out;
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const auto& b = blocks_[l];
    const std::string p = "backbone.h" + std::to_string(l) + ".";
    out.push_back({p + "ln1.gamma", b.ln1_gamma});
    out.push_back({p + "ln1.beta", b.ln1_beta});
    const std::pair<const char*, const LoraLinear*> linears[] = {
        {"attn.query", &b.query}, {"attn.key", &b.key},   {"attn.value", &b.value},
        {"attn.out", &b.out},     {"mlp.fc_in", &b.fc_in}, {"mlp.fc_out", &b.fc_out}};
    for (const auto& [name, lin] : linears) {
      out.push_back({p + name + ".weight", lin->weight});
      out.push_back({p + name + ".bias", lin->bias});
    }
    out.push_back({p + "ln2.gamma", b.ln2_gamma});
    out.push_back({p + "ln2.beta", b.ln2_beta});
  }
  out.push_back({"backbone.ln_f.gamma", lnf_gamma_});
  out.push_back({"backbone.ln_f.beta", lnf_beta_});
  return out;
}

std::vector<NamedTensor> Backbone::adapter_parameters() const {
  std::vector<NamedTensor> out;
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const auto& b = blocks_[l];
    const std::string p = "backbone.h" + std::to_string(l) + ".attn.";
    for (const auto& [name, lin] : {std::pair{"query", &b.query}, {"value", &b.value}}) {
      if (!lin->has_adapter()) continue;
      out.push_back({p + name + ".lora_a", lin->lora_a});
      out.push_back({p + name + ".lora_b", lin->lora_b});
    }
  }
  return out;
}

void Backbone::import_weights(const std::vector<NamedTensor>& weights) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& w : weights) by_name[w.name] = &w.tensor;
  for (auto& target : base_parameters()) {
    auto it = by_name.find(target.name);
    if (it == by_name.end()) throw std::invalid_argument("import_weights: missing tensor '" + target.name + "'");
    if (it->second->shape() != target.tensor.shape()) {
      throw DimensionError("import_weights: '" + target.name + "' has shape " + shape_str(it->second->shape()) +
                           ", expected " + shape_str(target.tensor.shape()));
    }
    auto dst = target.tensor.mutable_data();
    const auto src = it->second->data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

std::size_t Backbone::base_parameter_count(const BackboneConfig& cfg) {
  const std::size_t d = cfg.dim;
  const std::size_t f = cfg.dim * cfg.ffn_mult;
  const std::size_t per_layer = 2 * d + 4 * (d * d + d) + 2 * d + (d * f + f) + (f * d + d);
  return cfg.layers * per_layer + 2 * d;
}

std::size_t Backbone::adapter_parameter_count(const BackboneConfig& cfg) {
  if (!cfg.use_lora) return 0;
  return cfg.layers * 2 * (cfg.lora.rank * cfg.dim + cfg.dim * cfg.lora.rank);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

void append_le(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

double read_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | p[i];
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors) {
  std::ostringstream head;
  head << "TPCKPT 1\n" << "count " << tensors.size() << '\n';
  std::size_t offset = 0;
  std::string payload;
  for (const auto& t : tensors) {
    if (t.name.empty() || t.name.find_first_of(" \t\n") != std::string::npos) {
      throw std::invalid_argument("checkpoint: tensor name '" + t.name + "' must be non-empty without whitespace");
    }
    head << t.name << ' ' << t.tensor.rank();
    for (std::size_t d : t.tensor.shape()) head << ' ' << d;
    head << ' ' << offset << '\n';
    for (double v : t.tensor.data()) append_le(payload, v);
    offset += t.tensor.size() * 8;
  }
  head << "data " << payload.size() << '\n';
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write '" + path + "'");
  const std::string h = head.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  std::string line;
  std::getline(in, line);
  if (line != "TPCKPT 1") throw std::runtime_error("checkpoint: bad magic in '" + path + "'");
  std::getline(in, line);
  std::istringstream cs(line);
  std::string word;
  std::size_t count = 0;
  if (!(cs >> word >> count) || word != "count") throw std::runtime_error("checkpoint: bad count line");
  struct Entry {
    std::string name;
    Shape shape;
    std::size_t offset;
  };
  std::vector<Entry> entries;
  for (std::size_t i = 0; i < count; ++i) {
    std::getline(in, line);
    std::istringstream ls(line);
    Entry e;
    std::size_t rank = 0;
    if (!(ls >> e.name >> rank)) throw std::runtime_error("checkpoint: bad manifest line " + std::to_string(i));
    e.shape.resize(rank);
    for (auto& d : e.shape) ls >> d;
    if (!(ls >> e.offset)) throw std::runtime_error("checkpoint: bad manifest line " + std::to_string(i));
    entries.push_back(std::move(e));
  }
  std::getline(in, line);
  std::istringstream ds(line);
  std::size_t bytes = 0;
  if (!(ds >> word >> bytes) || word != "data") throw std::runtime_error("checkpoint: bad data line");
  std::string payload(bytes, '\0');
  in.read(payload.data(), static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(in.gcount()) != bytes) throw std::runtime_error("checkpoint: truncated payload");
  std::vector<NamedTensor> out;
  const auto* raw = reinterpret_cast<const unsigned char*>(payload.data());
  for (const auto& e : entries) {
    const std::size_t n = numel(e.shape);
    if (e.offset + n * 8 > bytes) throw std::runtime_error("checkpoint: tensor '" + e.name + "' exceeds payload");
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = read_le(raw + e.offset + 8 * i);
    out.push_back({e.name, Tensor::constant(e.shape, std::move(values))});
  }
  return out;
}

std::uint64_t bytes_hash(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("file_hash: cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes_hash(bytes);
}

}  // namespace timeprompt
