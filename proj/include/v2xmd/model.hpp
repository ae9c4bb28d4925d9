#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "v2xmd/tape.hpp"
#include "v2xmd/tensor.hpp"

namespace v2xmd {

// Causal pre-norm transformer decoder: 10x8 window in, 8-vector next-step
// prediction out. Defaults give exactly 399,880 trainable scalars.
struct ModelConfig {
  int d_model = 128;
  int heads = 8;
  int ffn_dim = 256;
  int blocks = 3;
  double dropout = 0.1;
  int window = 10;
  int features = 8;
  double layer_norm_eps = 1e-5;

  int key_dim() const { return d_model / heads; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct NamedTensor {
  std::string name;
  nn::Tensor tensor;
};

class ModelWeights {
 public:
  ModelWeights() = default;
  ModelWeights(ModelConfig cfg, std::vector<NamedTensor> params);

  // truncated normal (sigma 0.02) projections, zero biases, unit gains
  static ModelWeights init(const ModelConfig& cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  std::vector<NamedTensor>& params() { return params_; }
  const std::vector<NamedTensor>& params() const { return params_; }

  const nn::Tensor& tensor(const std::string& name) const;
  nn::Tensor& tensor(const std::string& name);

  int64_t parameter_count() const;
  // scalar counts per architectural component: "in_proj", "block0"...,
  // "final_ln", "head"
  std::map<std::string, int64_t> parameter_audit() const;

  bool operator==(const ModelWeights& o) const;

 private:
  ModelConfig cfg_;
  std::vector<NamedTensor> params_;  // fixed order, shared with checkpoints
};

// PE[t, 2i] = sin(t / 10000^(2i/d)), PE[t, 2i+1] = cos(t / 10000^(2i/d))
nn::Tensor positional_encoding(int window, int d_model);

// additive causal mask: 0 on/below the diagonal, -1e9 above
nn::Tensor causal_mask(int window);

struct ForwardGraph {
  nn::Tape::Id prediction;     // [B, features]
  nn::Tape::Id hidden;         // [B, T, d_model] after the final layer norm
  std::vector<nn::Tape::Id> param_ids;  // aligned with ModelWeights::params()
};

// Builds the full forward graph on `tape`. `train` enables dropout, keyed by
// (dropout_seed, dropout_step, site index).
ForwardGraph build_forward(nn::Tape& tape, const ModelWeights& weights, const nn::Tensor& input,
                           bool train, uint64_t dropout_seed = 0, uint64_t dropout_step = 0);

// Inference helpers (dropout off, no gradients).
nn::Tensor predict(const ModelWeights& weights, const nn::Tensor& input);
nn::Tensor hidden_states(const ModelWeights& weights, const nn::Tensor& input);

}  // namespace v2xmd
