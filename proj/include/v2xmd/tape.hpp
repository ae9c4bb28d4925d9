#pragma once

#include <functional>
#include <vector>

#include "v2xmd/tensor.hpp"

namespace v2xmd::nn {

// Identifies one dropout site: masks are a pure function of
// (seed, step, layer) plus the element index, so replays are exact.
struct DropoutKey {
  uint64_t seed = 0;
  uint64_t step = 0;
  uint64_t layer = 0;
};

// Reverse-mode tape. Operations append nodes; node creation order is a
// topological order, so walking it backward visits each node exactly once.
// Values are immutable once written; one tape is single-threaded, but
// independent tapes may run in parallel.
class Tape {
 public:
  using Id = int32_t;

  Id leaf(Tensor value, bool needs_grad = false);
  Id constant(Tensor value) { return leaf(std::move(value), false); }

  // [.., m, k] x [k, n] -> [.., m, n] (leading dims folded into rows)
  Id matmul(Id a, Id w);
  // [b, m, k] x [b, k, n] -> [b, m, n]
  Id bmm(Id a, Id b);
  // [b, m, k] x [b, n, k]^T -> [b, m, n]
  Id bmm_nt(Id a, Id b);

  // b may have the same shape as a, shape [last] (bias over the last dim),
  // or rank(a)-1 matching trailing dims (broadcast over the leading dim).
  Id add(Id a, Id b);
  Id mul(Id a, Id b);
  Id scale(Id a, float s);

  // softmax over the last dim; optional additive mask of shape
  // [rows, cols] broadcast over the leading dim (or exact shape).
  Id softmax_rows(Id a, const Tensor* additive_mask = nullptr);

  // normalize over the last dim with learned gain/bias of shape [cols]
  Id layer_norm(Id x, Id gain, Id bias, float eps = 1e-5f);

  Id gelu(Id x);

  // Inverted-scaling dropout; identity when !train or rate == 0.
  Id dropout(Id x, float rate, bool train, DropoutKey key);

  Id transpose_last2(Id x);
  Id reshape(Id x, Shape s);

  // [B, T, H*S] -> [B*H, T, S] and back
  Id split_heads(Id x, int heads);
  Id merge_heads(Id x, int heads);

  // [B, T, C] -> [B, C], picking time index t
  Id select_time(Id x, int t);

  Id sum(Id x);
  Id mean(Id x);

  // elementwise Huber loss between pred and target
  Id huber(Id pred, Id target, float delta);

  // Accumulates gradients for every node that transitively feeds `root`,
  // which must be scalar.
  void backward(Id root);

  const Tensor& value(Id id) const { return nodes_[id].value; }
  const Tensor& grad(Id id) const;
  bool needs_grad(Id id) const { return nodes_[id].needs_grad; }
  size_t node_count() const { return nodes_.size(); }

 private:
  // invoked with the node's own id; reads its grad, accumulates parents'
  using BackwardFn = std::function<void(Tape&, Id)>;

  struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily during backward
    bool needs_grad = false;
    BackwardFn backward_fn;  // empty for leaves
  };

  Id push(Tensor value, bool needs_grad, BackwardFn backward_fn);
  Tensor& grad_buffer(Id id);
  void check_value(Id id) const;

  std::vector<Node> nodes_;
};

// Max relative error between tape gradients and central finite differences,
// taken over every element of every parameter. `build` must construct the
// same scalar-valued graph from the given parameter leaves each call.
double grad_check(const std::function<Tape::Id(Tape&, const std::vector<Tape::Id>&)>& build,
                  std::vector<Tensor> params, double h);

}  // namespace v2xmd::nn
