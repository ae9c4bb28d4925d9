#include "v2xmd/model.hpp"

#include <cmath>
#include <stdexcept>

#include "v2xmd/rng.hpp"

namespace v2xmd {

using nn::Shape;
using nn::Tape;
using nn::Tensor;

void ModelConfig::validate() const {
  if (d_model <= 0 || heads <= 0 || ffn_dim <= 0 || blocks <= 0 || window <= 0 || features <= 0)
    throw std::invalid_argument("ModelConfig: all dimensions must be positive");
  if (d_model % heads != 0)
    throw std::invalid_argument("ModelConfig: heads must divide d_model");
  if (d_model % 2 != 0)
    throw std::invalid_argument("ModelConfig: d_model must be even for sinusoidal encoding");
  if (dropout < 0.0 || dropout >= 1.0)
    throw std::invalid_argument("ModelConfig: dropout must be in [0, 1)");
}

ModelWeights::ModelWeights(ModelConfig cfg, std::vector<NamedTensor> params)
    : cfg_(cfg), params_(std::move(params)) {
  cfg_.validate();
}

namespace {

Tensor trunc_normal(Shape s, Rng& rng, double sigma) {
  Tensor t(s);
  for (int64_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<float>(rng.truncated_normal(sigma));
  return t;
}

}  // namespace

ModelWeights ModelWeights::init(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(seed, /*stream=*/0x6d6f64656cull);
  constexpr double kSigma = 0.02;
  std::vector<NamedTensor> p;

  auto linear = [&](const std::string& name, int in, int out) {
    p.push_back({name + ".w", trunc_normal(Shape(in, out), rng, kSigma)});
    p.push_back({name + ".b", Tensor::zeros(Shape(out))});
  };
  auto norm = [&](const std::string& name, int dim) {
    p.push_back({name + ".g", Tensor::full(Shape(dim), 1.0f)});
    p.push_back({name + ".b", Tensor::zeros(Shape(dim))});
  };

  linear("in_proj", cfg.features, cfg.d_model);
  for (int b = 0; b < cfg.blocks; ++b) {
    const std::string blk = "block" + std::to_string(b);
    norm(blk + ".ln1", cfg.d_model);
    linear(blk + ".attn.q", cfg.d_model, cfg.d_model);
    linear(blk + ".attn.k", cfg.d_model, cfg.d_model);
    linear(blk + ".attn.v", cfg.d_model, cfg.d_model);
    linear(blk + ".attn.out", cfg.d_model, cfg.d_model);
    norm(blk + ".ln2", cfg.d_model);
    linear(blk + ".ffn.up", cfg.d_model, cfg.ffn_dim);
    linear(blk + ".ffn.down", cfg.ffn_dim, cfg.d_model);
  }
  norm("final_ln", cfg.d_model);
  linear("head", cfg.d_model, cfg.features);

  return ModelWeights(cfg, std::move(p));
}

const Tensor& ModelWeights::tensor(const std::string& name) const {
  for (const auto& nt : params_)
    if (nt.name == name) return nt.tensor;
  throw std::out_of_range("ModelWeights: no tensor named " + name);
}

Tensor& ModelWeights::tensor(const std::string& name) {
  for (auto& nt : params_)
    if (nt.name == name) return nt.tensor;
  throw std::out_of_range("ModelWeights: no tensor named " + name);
}

int64_t ModelWeights::parameter_count() const {
  int64_t n = 0;
  for (const auto& nt : params_) n += nt.tensor.size();
  return n;
}

std::map<std::string, int64_t> ModelWeights::parameter_audit() const {
  std::map<std::string, int64_t> audit;
  for (const auto& nt : params_) {
    const auto dot = nt.name.find('.');
    audit[nt.name.substr(0, dot)] += nt.tensor.size();
  }
  return audit;
}

bool ModelWeights::operator==(const ModelWeights& o) const {
  if (!(cfg_ == o.cfg_) || params_.size() != o.params_.size()) return false;
  for (size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name != o.params_[i].name) return false;
    const Tensor& a = params_[i].tensor;
    const Tensor& b = o.params_[i].tensor;
    if (!(a.shape() == b.shape())) return false;
    for (int64_t j = 0; j < a.size(); ++j)
      if (a[j] != b[j]) return false;
  }
  return true;
}

Tensor positional_encoding(int window, int d_model) {
  if (d_model % 2 != 0) throw std::invalid_argument("positional_encoding: d_model must be even");
  Tensor pe(Shape(window, d_model));
  for (int t = 0; t < window; ++t) {
    for (int i = 0; i < d_model / 2; ++i) {
      const double rate = std::pow(10000.0, 2.0 * i / d_model);
      pe.at(t, 2 * i) = static_cast<float>(std::sin(t / rate));
      pe.at(t, 2 * i + 1) = static_cast<float>(std::cos(t / rate));
    }
  }
  return pe;
}

Tensor causal_mask(int window) {
  Tensor m(Shape(window, window));
  for (int i = 0; i < window; ++i)
    for (int j = 0; j < window; ++j) m.at(i, j) = j > i ? -1e9f : 0.0f;
  return m;
}

ForwardGraph build_forward(Tape& tape, const ModelWeights& weights, const Tensor& input,
                           bool train, uint64_t dropout_seed, uint64_t dropout_step) {
  const ModelConfig& cfg = weights.config();
  const Shape& s = input.shape();
  if (s.ndim != 3 || s[1] != cfg.window || s[2] != cfg.features)
    throw std::invalid_argument("build_forward: input " + s.str() + " does not match window " +
                                std::to_string(cfg.window) + " x features " +
                                std::to_string(cfg.features));

  ForwardGraph g;
  g.param_ids.reserve(weights.params().size());
  for (const auto& nt : weights.params()) g.param_ids.push_back(tape.leaf(nt.tensor, true));
  auto pid = [&](size_t i) { return g.param_ids[i]; };

  const float attn_scale = 1.0f / std::sqrt(static_cast<float>(cfg.key_dim()));
  const float eps = static_cast<float>(cfg.layer_norm_eps);
  const float rate = static_cast<float>(cfg.dropout);
  const Tensor mask = causal_mask(cfg.window);
  uint64_t site = 0;
  auto drop = [&](Tape::Id x) {
    return tape.dropout(x, rate, train, nn::DropoutKey{dropout_seed, dropout_step, site++});
  };

  Tape::Id in = tape.constant(input);
  size_t w = 0;  // cursor into the fixed parameter order
  auto next2 = [&] { size_t b = w; w += 2; return b; };

  const size_t in_proj = next2();
  Tape::Id x = tape.add(tape.matmul(in, pid(in_proj)), pid(in_proj + 1));
  x = tape.add(x, tape.constant(positional_encoding(cfg.window, cfg.d_model)));

  for (int b = 0; b < cfg.blocks; ++b) {
    const size_t ln1 = next2(), q = next2(), k = next2(), v = next2(), out = next2();
    const size_t ln2 = next2(), up = next2(), down = next2();

    Tape::Id a = tape.layer_norm(x, pid(ln1), pid(ln1 + 1), eps);
    Tape::Id qh = tape.split_heads(tape.add(tape.matmul(a, pid(q)), pid(q + 1)), cfg.heads);
    Tape::Id kh = tape.split_heads(tape.add(tape.matmul(a, pid(k)), pid(k + 1)), cfg.heads);
    Tape::Id vh = tape.split_heads(tape.add(tape.matmul(a, pid(v)), pid(v + 1)), cfg.heads);
    Tape::Id scores = tape.scale(tape.bmm_nt(qh, kh), attn_scale);
    Tape::Id attw = drop(tape.softmax_rows(scores, &mask));
    Tape::Id ctx = tape.merge_heads(tape.bmm(attw, vh), cfg.heads);
    Tape::Id attn_out = drop(tape.add(tape.matmul(ctx, pid(out)), pid(out + 1)));
    x = tape.add(x, attn_out);

    Tape::Id f = tape.layer_norm(x, pid(ln2), pid(ln2 + 1), eps);
    Tape::Id h = tape.gelu(tape.add(tape.matmul(f, pid(up)), pid(up + 1)));
    Tape::Id h2 = drop(tape.add(tape.matmul(h, pid(down)), pid(down + 1)));
    x = tape.add(x, h2);
  }

  const size_t fln = next2();
  g.hidden = tape.layer_norm(x, pid(fln), pid(fln + 1), eps);
  const size_t head = next2();
  g.prediction = tape.add(tape.matmul(tape.select_time(g.hidden, cfg.window - 1), pid(head)),
                          pid(head + 1));
  return g;
}

Tensor predict(const ModelWeights& weights, const Tensor& input) {
  Tape tape;
  return tape.value(build_forward(tape, weights, input, /*train=*/false).prediction);
}

Tensor hidden_states(const ModelWeights& weights, const Tensor& input) {
  Tape tape;
  return tape.value(build_forward(tape, weights, input, /*train=*/false).hidden);
}

}  // namespace v2xmd
