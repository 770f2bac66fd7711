#pragma once

// Tiny decoder-only transformer standing in for the pretrained language
// model. Base weights are seeded-random and frozen; low-rank adapters on the
// query and value projections are the only trainable backbone parameters.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "timeprompt/random.hpp"
#include "timeprompt/tensor.hpp"

namespace timeprompt {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct LoraConfig {
  std::size_t rank = 8;
  double alpha = 16.0;
  double dropout = 0.1;
};

// y = x W^T + b + (alpha / r) * B (A (dropout(x))), W frozen.
class LoraLinear {
 public:
  LoraLinear() = default;
  // `adapter` = false builds a plain frozen linear map.
  LoraLinear(std::size_t in, std::size_t out, const LoraConfig& cfg, bool adapter, Rng& rng);

  // rng supplies the dropout seed and is required only in training mode.
  Tensor forward(const Tensor& x, Rng* rng = nullptr) const;

  // W + (alpha / r) B A. Throws in training mode, where dropout would make the
  // merged map differ from forward().
  Tensor merged_weight() const;

  bool has_adapter() const { return adapter_; }
  double scaling() const { return adapter_ ? cfg_.alpha / static_cast<double>(cfg_.rank) : 0.0; }
  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }
  void set_alpha(double alpha) { cfg_.alpha = alpha; }

  Tensor weight;  // [out, in], frozen
  Tensor bias;    // [out], frozen
  Tensor lora_a;  // [r, in]
  Tensor lora_b;  // [out, r], zero at init

 private:
  LoraConfig cfg_;
  bool adapter_ = false;
  bool training_ = false;
};

// Free-function spellings of the adapter contract.
inline Tensor lora_forward(const LoraLinear& layer, const Tensor& x, Rng* rng = nullptr) {
  return layer.forward(x, rng);
}
Tensor merge_lora(const LoraLinear& layer);

struct BackboneConfig {
  std::size_t layers = 2;
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t ffn_mult = 4;
  std::uint64_t seed = 0;
  bool use_lora = true;
  LoraConfig lora;
};

class Backbone {
 public:
  Backbone() = default;
  explicit Backbone(const BackboneConfig& cfg);

  // tokens [G, M, D] -> [G, M, D], causal over M.
  Tensor forward(const Tensor& tokens, Rng* rng = nullptr) const;

  void set_training(bool training);
  bool training() const { return training_; }

  const BackboneConfig& config() const { return cfg_; }

  std::vector<NamedTensor> base_parameters() const;
  std::vector<NamedTensor> adapter_parameters() const;
  std::vector<LoraLinear*> linears();

  // Replaces base weights with externally exported ones (names and shapes
  // must match base_parameters()).
  void import_weights(const std::vector<NamedTensor>& weights);

  // Closed-form counts, for accounting checks.
  static std::size_t base_parameter_count(const BackboneConfig& cfg);
  static std::size_t adapter_parameter_count(const BackboneConfig& cfg);

 private:
  struct Block {
    Tensor ln1_gamma, ln1_beta;
    LoraLinear query, key, value, out;
    Tensor ln2_gamma, ln2_beta;
    LoraLinear fc_in, fc_out;
  };

  Tensor attention(const Block& block, const Tensor& x, Rng* rng) const;

  BackboneConfig cfg_;
  std::vector<Block> blocks_;
  Tensor lnf_gamma_, lnf_beta_;
  bool training_ = false;
};

inline Backbone init_backbone(const BackboneConfig& cfg) { return Backbone(cfg); }

// Checkpoint file:
//   "TPCKPT 1\n"
//   "count <n>\n"
//   n lines "<name> <rank> <dim0> ... <dimR-1> <byte offset>\n"
//   "data <payload bytes>\n"
//   payload: little-endian IEEE-754 binary64 values, tensors back to back in
//   manifest order, offsets relative to the first payload byte.
void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::string& path);

// 64-bit FNV-1a over the file's bytes.
std::uint64_t file_hash(const std::string& path);
std::uint64_t bytes_hash(const std::string& bytes);

}  // namespace timeprompt
