#include "v2xmd/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>
#include <stdexcept>

#include "v2xmd/rng.hpp"

namespace v2xmd::nn {
namespace {

constexpr float kInvSqrt2 = 0.70710678118654752440f;
constexpr float kInvSqrt2Pi = 0.39894228040143267794f;

// C[m,n] = A[m,k] * B[k,n], optionally accumulating into C.
// Row-parallel with a fixed inner order, so results are bitwise
// deterministic for any thread count.
void matmul_nn(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n,
               bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    float* crow = c + i * n;
    if (!accumulate)
      for (int64_t j = 0; j < n; ++j) crow[j] = 0.0f;
    const float* arow = a + i * k;
    for (int64_t kk = 0; kk < k; ++kk) {
      const float av = arow[kk];
      const float* brow = b + kk * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] = A[m,k] * B[n,k]^T
void matmul_nt(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n,
               bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    const float* arow = a + i * k;
    float* crow = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const float* brow = b + j * k;
      float acc = 0.0f;
      for (int64_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      crow[j] = accumulate ? crow[j] + acc : acc;
    }
  }
}

// C[k,n] = A[m,k]^T * B[m,n]
void matmul_tn(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n,
               bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < k; ++i) {
    float* crow = c + i * n;
    if (!accumulate)
      for (int64_t j = 0; j < n; ++j) crow[j] = 0.0f;
    for (int64_t mm = 0; mm < m; ++mm) {
      const float av = a[mm * k + i];
      const float* brow = b + mm * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

Tape::Id Tape::push(Tensor value, bool needs_grad, BackwardFn backward_fn) {
  nodes_.push_back(Node{std::move(value), Tensor{}, needs_grad, std::move(backward_fn)});
  const Id id = static_cast<Id>(nodes_.size() - 1);
  check_value(id);
  return id;
}

void Tape::check_value(Id id) const {
#ifndef NDEBUG
  if (!nodes_[id].value.finite())
    throw std::runtime_error("Tape: non-finite value produced by node " + std::to_string(id));
#else
  (void)id;
#endif
}

Tensor& Tape::grad_buffer(Id id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Tensor::zeros(n.value.shape());
  return n.grad;
}

const Tensor& Tape::grad(Id id) const {
  static const Tensor empty;
  const Node& n = nodes_[id];
  return n.grad.size() ? n.grad : empty;
}

Tape::Id Tape::leaf(Tensor value, bool needs_grad) {
  return push(std::move(value), needs_grad, {});
}

Tape::Id Tape::matmul(Id a, Id w) {
  const Shape sa = value(a).shape();
  const Shape sw = value(w).shape();
  if (sw.ndim != 2 || sa.cols() != sw[0])
    throw std::invalid_argument("matmul: incompatible shapes " + sa.str() + " x " + sw.str());
  const int64_t rows = sa.size() / sa.cols();
  const int64_t k = sa.cols(), n = sw[1];
  Shape out = sa;
  out.d[out.ndim - 1] = static_cast<int>(n);
  Tensor y(out);
  matmul_nn(value(a).data(), value(w).data(), y.data(), rows, k, n, false);
  return push(std::move(y), needs_grad(a) || needs_grad(w), [=](Tape& t, Id self) {
    const Tensor& gy = t.grad(self);
    if (t.needs_grad(a))
      matmul_nt(gy.data(), t.value(w).data(), t.grad_buffer(a).data(), rows, n, k, true);
    if (t.needs_grad(w))
      matmul_tn(t.value(a).data(), gy.data(), t.grad_buffer(w).data(), rows, k, n, true);
  });
}

Tape::Id Tape::bmm(Id a, Id b) {
  const Shape sa = value(a).shape();
  const Shape sb = value(b).shape();
  if (sa.ndim != 3 || sb.ndim != 3 || sa[0] != sb[0] || sa[2] != sb[1])
    throw std::invalid_argument("bmm: incompatible shapes " + sa.str() + " x " + sb.str());
  const int64_t nb = sa[0], m = sa[1], k = sa[2], n = sb[2];
  Tensor y(Shape(static_cast<int>(nb), static_cast<int>(m), static_cast<int>(n)));
  for (int64_t i = 0; i < nb; ++i)
    matmul_nn(value(a).data() + i * m * k, value(b).data() + i * k * n, y.data() + i * m * n, m, k,
              n, false);
  return push(std::move(y), needs_grad(a) || needs_grad(b), [=](Tape& t, Id self) {
    const Tensor& gy = t.grad(self);
    for (int64_t i = 0; i < nb; ++i) {
      const float* gyi = gy.data() + i * m * n;
      if (t.needs_grad(a))
        matmul_nt(gyi, t.value(b).data() + i * k * n, t.grad_buffer(a).data() + i * m * k, m, n, k,
                  true);
      if (t.needs_grad(b))
        matmul_tn(t.value(a).data() + i * m * k, gyi, t.grad_buffer(b).data() + i * k * n, m, k, n,
                  true);
    }
  });
}

Tape::Id Tape::bmm_nt(Id a, Id b) {
  const Shape sa = value(a).shape();
  const Shape sb = value(b).shape();
  if (sa.ndim != 3 || sb.ndim != 3 || sa[0] != sb[0] || sa[2] != sb[2])
    throw std::invalid_argument("bmm_nt: incompatible shapes " + sa.str() + " x " + sb.str());
  const int64_t nb = sa[0], m = sa[1], k = sa[2], n = sb[1];
  Tensor y(Shape(static_cast<int>(nb), static_cast<int>(m), static_cast<int>(n)));
  for (int64_t i = 0; i < nb; ++i)
    matmul_nt(value(a).data() + i * m * k, value(b).data() + i * n * k, y.data() + i * m * n, m, k,
              n, false);
  return push(std::move(y), needs_grad(a) || needs_grad(b), [=](Tape& t, Id self) {
    const Tensor& gy = t.grad(self);
    for (int64_t i = 0; i < nb; ++i) {
      const float* gyi = gy.data() + i * m * n;
      // dA += gY * B ; dB += gY^T * A
      if (t.needs_grad(a))
        matmul_nn(gyi, t.value(b).data() + i * n * k, t.grad_buffer(a).data() + i * m * k, m, n, k,
                  true);
      if (t.needs_grad(b))
        matmul_tn(gyi, t.value(a).data() + i * m * k, t.grad_buffer(b).data() + i * n * k, m, n, k,
                  true);
    }
  });
}

Tape::Id Tape::add(Id a, Id b) {
  const Shape sa = value(a).shape();
  const Shape sb = value(b).shape();
  Tensor y = value(a);
  const int64_t total = y.size();
  const int64_t bsize = value(b).size();

  if (sa == sb) {
    const float* pb = value(b).data();
    float* py = y.data();
    for (int64_t i = 0; i < total; ++i) py[i] += pb[i];
    return push(std::move(y), needs_grad(a) || needs_grad(b), [=](Tape& t, Id self) {
      const Tensor& gy = t.grad(self);
      if (t.needs_grad(a)) {
        float* ga = t.grad_buffer(a).data();
        for (int64_t i = 0; i < total; ++i) ga[i] += gy[i];
      }
      if (t.needs_grad(b)) {
        float* gb = t.grad_buffer(b).data();
        for (int64_t i = 0; i < total; ++i) gb[i] += gy[i];
      }
    });
  }

  // broadcast over leading dims: b repeats every `bsize` elements
  const bool bias_like = sb.ndim == 1 && sb[0] == sa.cols();
  const bool trailing = sb.ndim == sa.ndim - 1 && sb.rows() == sa.d[sa.ndim - 2] &&
                        sb.cols() == sa.cols();
  if (!bias_like && !trailing)
    throw std::invalid_argument("add: incompatible shapes " + sa.str() + " + " + sb.str());
  const float* pb = value(b).data();
  float* py = y.data();
  for (int64_t i = 0; i < total; ++i) py[i] += pb[i % bsize];
  return push(std::move(y), needs_grad(a) || needs_grad(b), [=](Tape& t, Id self) {
    const Tensor& gy = t.grad(self);
    if (t.needs_grad(a)) {
      float* ga = t.grad_buffer(a).data();
      for (int64_t i = 0; i < total; ++i) ga[i] += gy[i];
    }
    if (t.needs_grad(b)) {
      float* gb = t.grad_buffer(b).data();
      for (int64_t i = 0; i < total; ++i) gb[i % bsize] += gy[i];
    }
  });
}

Tape::Id Tape::mul(Id a, Id b) {
  if (!(value(a).shape() == value(b).shape()))
    throw std::invalid_argument("mul: shape mismatch " + value(a).shape().str() + " vs " +
                                value(b).shape().str());
  Tensor y = value(a);
  const int64_t total = y.size();
  const float* pb = value(b).data();
  float* py = y.data();
  for (int64_t i = 0; i < total; ++i) py[i] *= pb[i];
  return push(std::move(y), needs_grad(a) || needs_grad(b), [=](Tape& t, Id self) {
    const Tensor& gy = t.grad(self);
    if (t.needs_grad(a)) {
      float* ga = t.grad_buffer(a).data();
      const float* vb = t.value(b).data();
      for (int64_t i = 0; i < total; ++i) ga[i] += gy[i] * vb[i];
    }
    if (t.needs_grad(b)) {
      float* gb = t.grad_buffer(b).data();
      const float* va = t.value(a).data();
      for (int64_t i = 0; i < total; ++i) gb[i] += gy[i] * va[i];
    }
  });
}

Tape::Id Tape::scale(Id a, float s) {
  Tensor y = value(a);
  const int64_t total = y.size();
  float* py = y.data();
  for (int64_t i = 0; i < total; ++i) py[i] *= s;
  return push(std::move(y), needs_grad(a), [=](Tape& t, Id self) {
    const Tensor& gy = t.grad(self);
    float* ga = t.grad_buffer(a).data();
    for (int64_t i = 0; i < total; ++i) ga[i] += gy[i] * s;
  });
}

Tape::Id Tape::softmax_rows(Id a, const Tensor* additive_mask) {
  const Shape sa = value(a).shape();
  const int64_t cols = sa.cols();
  const int64_t rows = sa.size() / cols;
  Tensor mask;
  if (additive_mask) {
    mask = *additive_mask;
    const Shape& sm = mask.shape();
    const bool exact = sm == sa;
    const bool bcast = sm.rows() == sa.rows() && sm.cols() == cols &&
                       sm.size() == sa.rows() * cols;
    if (!exact && !bcast)
      throw std::invalid_argument("softmax_rows: mask shape " + sm.str() + " does not fit " +
                                  sa.str());
  }
  const int64_t mask_period = additive_mask ? mask.size() : 0;

  Tensor y(sa);
  {
    const float* px = value(a).data();
    const float* pm = additive_mask ? mask.data() : nullptr;
    float* py = y.data();
    for (int64_t r = 0; r < rows; ++r) {
      const float* xr = px + r * cols;
      float* yr = py + r * cols;
      float mx = -std::numeric_limits<float>::infinity();
      for (int64_t j = 0; j < cols; ++j) {
        const float v = xr[j] + (pm ? pm[(r * cols + j) % mask_period] : 0.0f);
        yr[j] = v;
        mx = std::max(mx, v);
      }
      double denom = 0.0;
      for (int64_t j = 0; j < cols; ++j) {
        yr[j] = std::exp(yr[j] - mx);
        denom += yr[j];
      }
      const float inv = static_cast<float>(1.0 / denom);
      for (int64_t j = 0; j < cols; ++j) yr[j] *= inv;
    }
  }
  return push(std::move(y), needs_grad(a), [=](Tape& t, Id self) {
    const Tensor& gy = t.grad(self);
    const Tensor& yv = t.value(self);
    float* ga = t.grad_buffer(a).data();
    for (int64_t r = 0; r < rows; ++r) {
      const float* yr = yv.data() + r * cols;
      const float* gr = gy.data() + r * cols;
      double dot = 0.0;
      for (int64_t j = 0; j < cols; ++j) dot += static_cast<double>(gr[j]) * yr[j];
      const float d = static_cast<float>(dot);
      float* gar = ga + r * cols;
      for (int64_t j = 0; j < cols; ++j) gar[j] += (gr[j] - d) * yr[j];
    }
  });
}

Tape::Id Tape::layer_norm(Id x, Id gain, Id bias, float eps) {
  const Shape sx = value(x).shape();
  const int64_t cols = sx.cols();
  const int64_t rows = sx.size() / cols;
  if (value(gain).size() != cols || value(bias).size() != cols)
    throw std::invalid_argument("layer_norm: gain/bias must match the last dim of " + sx.str());

  // xhat and inv_std are needed by the backward pass; shared_ptr keeps the
  // closure copyable.
  auto xhat = std::make_shared<std::vector<float>>(sx.size());
  auto inv_std = std::make_shared<std::vector<float>>(rows);

  Tensor y(sx);
  {
    const float* px = value(x).data();
    const float* pg = value(gain).data();
    const float* pb = value(bias).data();
    float* py = y.data();
    for (int64_t r = 0; r < rows; ++r) {
      const float* xr = px + r * cols;
      double mean = 0.0;
      for (int64_t j = 0; j < cols; ++j) mean += xr[j];
      mean /= cols;
      double var = 0.0;
      for (int64_t j = 0; j < cols; ++j) {
        const double d = xr[j] - mean;
        var += d * d;
      }
      var /= cols;
      const float is = static_cast<float>(1.0 / std::sqrt(var + eps));
      (*inv_std)[r] = is;
      float* hr = xhat->data() + r * cols;
      float* yr = py + r * cols;
      for (int64_t j = 0; j < cols; ++j) {
        hr[j] = (xr[j] - static_cast<float>(mean)) * is;
        yr[j] = hr[j] * pg[j] + pb[j];
      }
    }
  }
  return push(std::move(y), needs_grad(x) || needs_grad(gain) || needs_grad(bias),
              [=](Tape& t, Id self) {
                const Tensor& gy = t.grad(self);
                const float* pg = t.value(gain).data();
                if (t.needs_grad(gain)) {
                  float* gg = t.grad_buffer(gain).data();
                  for (int64_t r = 0; r < rows; ++r) {
                    const float* gr = gy.data() + r * cols;
                    const float* hr = xhat->data() + r * cols;
                    for (int64_t j = 0; j < cols; ++j) gg[j] += gr[j] * hr[j];
                  }
                }
                if (t.needs_grad(bias)) {
                  float* gb = t.grad_buffer(bias).data();
                  for (int64_t r = 0; r < rows; ++r) {
                    const float* gr = gy.data() + r * cols;
                    for (int64_t j = 0; j < cols; ++j) gb[j] += gr[j];
                  }
                }
                if (t.needs_grad(x)) {
                  float* gx = t.grad_buffer(x).data();
                  for (int64_t r = 0; r < rows; ++r) {
                    const float* gr = gy.data() + r * cols;
                    const float* hr = xhat->data() + r * cols;
                    double sum_dh = 0.0, sum_dh_h = 0.0;
                    for (int64_t j = 0; j < cols; ++j) {
                      const double dh = static_cast<double>(gr[j]) * pg[j];
                      sum_dh += dh;
                      sum_dh_h += dh * hr[j];
                    }
                    const float m1 = static_cast<float>(sum_dh / cols);
                    const float m2 = static_cast<float>(sum_dh_h / cols);
                    const float is = (*inv_std)[r];
                    float* gxr = gx + r * cols;
                    for (int64_t j = 0; j < cols; ++j) {
                      const float dh = gr[j] * pg[j];
                      gxr[j] += is * (dh - m1 - hr[j] * m2);
                    }
                  }
                }
              });
}

Tape::Id Tape::gelu(Id x) {
  Tensor y = value(x);
  const int64_t total = y.size();
  float* py = y.data();
  for (int64_t i = 0; i < total; ++i) {
    const float v = py[i];
    py[i] = 0.5f * v * (1.0f + std::erf(v * kInvSqrt2));
  }
  return push(std::move(y), needs_grad(x), [=](Tape& t, Id self) {
    const Tensor& gy = t.grad(self);
    const float* px = t.value(x).data();
    float* gx = t.grad_buffer(x).data();
    for (int64_t i = 0; i < total; ++i) {
      const float v = px[i];
      const float cdf = 0.5f * (1.0f + std::erf(v * kInvSqrt2));
      const float pdf = kInvSqrt2Pi * std::exp(-0.5f * v * v);
      gx[i] += gy[i] * (cdf + v * pdf);
    }
  });
}

Tape::Id Tape::dropout(Id x, float rate, bool train, DropoutKey key) {
  if (!train || rate <= 0.0f) {
    Tensor y = value(x);
    const int64_t total = y.size();
    return push(std::move(y), needs_grad(x), [=](Tape& t, Id self) {
      const Tensor& gy = t.grad(self);
      float* gx = t.grad_buffer(x).data();
      for (int64_t i = 0; i < total; ++i) gx[i] += gy[i];
    });
  }
  if (rate >= 1.0f) throw std::invalid_argument("dropout: rate must be < 1");
  const float keep_scale = 1.0f / (1.0f - rate);
  Tensor y = value(x);
  const int64_t total = y.size();
  float* py = y.data();
  for (int64_t i = 0; i < total; ++i) {
    const bool keep = counter_uniform(key.seed, key.step, key.layer, static_cast<uint64_t>(i)) >= rate;
    py[i] = keep ? py[i] * keep_scale : 0.0f;
  }
  return push(std::move(y), needs_grad(x), [=](Tape& t, Id self) {
    const Tensor& gy = t.grad(self);
    float* gx = t.grad_buffer(x).data();
    for (int64_t i = 0; i < total; ++i) {
      const bool keep =
          counter_uniform(key.seed, key.step, key.layer, static_cast<uint64_t>(i)) >= rate;
      if (keep) gx[i] += gy[i] * keep_scale;
    }
  });
}

Tape::Id Tape::transpose_last2(Id x) {
  const Shape sx = value(x).shape();
  if (sx.ndim < 2) throw std::invalid_argument("transpose_last2: rank must be >= 2");
  const int64_t nb = sx.ndim == 3 ? sx[0] : 1;
  const int64_t m = sx.rows(), n = sx.cols();
  Shape out = sx;
  out.d[out.ndim - 2] = static_cast<int>(n);
  out.d[out.ndim - 1] = static_cast<int>(m);
  Tensor y(out);
  for (int64_t b = 0; b < nb; ++b) {
    const float* src = value(x).data() + b * m * n;
    float* dst = y.data() + b * m * n;
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
  }
  return push(std::move(y), needs_grad(x), [=](Tape& t, Id self) {
    const Tensor& gy = t.grad(self);
    float* gx = t.grad_buffer(x).data();
    for (int64_t b = 0; b < nb; ++b) {
      const float* src = gy.data() + b * m * n;
      float* dst = gx + b * m * n;
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) dst[i * n + j] += src[j * m + i];
    }
  });
}

Tape::Id Tape::reshape(Id x, Shape s) {
  Tensor y = value(x).reshaped(s);
  const int64_t total = y.size();
  return push(std::move(y), needs_grad(x), [=](Tape& t, Id self) {
    const Tensor& gy = t.grad(self);
    float* gx = t.grad_buffer(x).data();
    for (int64_t i = 0; i < total; ++i) gx[i] += gy[i];
  });
}

Tape::Id Tape::split_heads(Id x, int heads) {
  const Shape sx = value(x).shape();
  if (sx.ndim != 3 || sx[2] % heads != 0)
    throw std::invalid_argument("split_heads: shape " + sx.str() + " with " +
                                std::to_string(heads) + " heads");
  const int64_t B = sx[0], T = sx[1], C = sx[2], S = C / heads;
  Tensor y(Shape(static_cast<int>(B * heads), static_cast<int>(T), static_cast<int>(S)));
  const float* px = value(x).data();
  float* py = y.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t t = 0; t < T; ++t)
      for (int64_t h = 0; h < heads; ++h)
        std::memcpy(py + (((b * heads + h) * T) + t) * S, px + ((b * T + t) * C) + h * S,
                    sizeof(float) * S);
  return push(std::move(y), needs_grad(x), [=](Tape& tp, Id self) {
    const Tensor& gy = tp.grad(self);
    float* gx = tp.grad_buffer(x).data();
    for (int64_t b = 0; b < B; ++b)
      for (int64_t t = 0; t < T; ++t)
        for (int64_t h = 0; h < heads; ++h) {
          const float* src = gy.data() + (((b * heads + h) * T) + t) * S;
          float* dst = gx + ((b * T + t) * C) + h * S;
          for (int64_t j = 0; j < S; ++j) dst[j] += src[j];
        }
  });
}

Tape::Id Tape::merge_heads(Id x, int heads) {
  const Shape sx = value(x).shape();
  if (sx.ndim != 3 || sx[0] % heads != 0)
    throw std::invalid_argument("merge_heads: shape " + sx.str() + " with " +
                                std::to_string(heads) + " heads");
  const int64_t B = sx[0] / heads, T = sx[1], S = sx[2], C = S * heads;
  Tensor y(Shape(static_cast<int>(B), static_cast<int>(T), static_cast<int>(C)));
  const float* px = value(x).data();
  float* py = y.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t t = 0; t < T; ++t)
      for (int64_t h = 0; h < heads; ++h)
        std::memcpy(py + ((b * T + t) * C) + h * S, px + (((b * heads + h) * T) + t) * S,
                    sizeof(float) * S);
  return push(std::move(y), needs_grad(x), [=](Tape& tp, Id self) {
    const Tensor& gy = tp.grad(self);
    float* gx = tp.grad_buffer(x).data();
    for (int64_t b = 0; b < B; ++b)
      for (int64_t t = 0; t < T; ++t)
        for (int64_t h = 0; h < heads; ++h) {
          const float* src = gy.data() + ((b * T + t) * C) + h * S;
          float* dst = gx + (((b * heads + h) * T) + t) * S;
          for (int64_t j = 0; j < S; ++j) dst[j] += src[j];
        }
  });
}

Tape::Id Tape::select_time(Id x, int t) {
  const Shape sx = value(x).shape();
  if (sx.ndim != 3 || t < 0 || t >= sx[1])
    throw std::invalid_argument("select_time: index " + std::to_string(t) + " in " + sx.str());
  const int64_t B = sx[0], T = sx[1], C = sx[2];
  Tensor y(Shape(static_cast<int>(B), static_cast<int>(C)));
  for (int64_t b = 0; b < B; ++b)
    std::memcpy(y.data() + b * C, value(x).data() + (b * T + t) * C, sizeof(float) * C);
  return push(std::move(y), needs_grad(x), [=](Tape& tp, Id self) {
    const Tensor& gy = tp.grad(self);
    float* gx = tp.grad_buffer(x).data();
    for (int64_t b = 0; b < B; ++b) {
      const float* src = gy.data() + b * C;
      float* dst = gx + (b * T + t) * C;
      for (int64_t j = 0; j < C; ++j) dst[j] += src[j];
    }
  });
}

Tape::Id Tape::sum(Id x) {
  const int64_t total = value(x).size();
  Tensor y = Tensor::scalar(static_cast<float>(value(x).sum64()));
  return push(std::move(y), needs_grad(x), [=](Tape& t, Id self) {
    const float g = t.grad(self)[0];
    float* gx = t.grad_buffer(x).data();
    for (int64_t i = 0; i < total; ++i) gx[i] += g;
  });
}

Tape::Id Tape::mean(Id x) {
  const int64_t total = value(x).size();
  Tensor y = Tensor::scalar(static_cast<float>(value(x).sum64() / static_cast<double>(total)));
  return push(std::move(y), needs_grad(x), [=](Tape& t, Id self) {
    const float g = t.grad(self)[0] / static_cast<float>(total);
    float* gx = t.grad_buffer(x).data();
    for (int64_t i = 0; i < total; ++i) gx[i] += g;
  });
}

Tape::Id Tape::huber(Id pred, Id target, float delta) {
  if (!(value(pred).shape() == value(target).shape()))
    throw std::invalid_argument("huber: shape mismatch " + value(pred).shape().str() + " vs " +
                                value(target).shape().str());
  if (delta <= 0.0f) throw std::invalid_argument("huber: delta must be positive");
  Tensor y(value(pred).shape());
  const int64_t total = y.size();
  {
    const float* pp = value(pred).data();
    const float* pt = value(target).data();
    float* py = y.data();
    for (int64_t i = 0; i < total; ++i) {
      const float r = pp[i] - pt[i];
      const float ar = std::abs(r);
      py[i] = ar <= delta ? 0.5f * r * r : delta * ar - 0.5f * delta * delta;
    }
  }
  return push(std::move(y), needs_grad(pred) || needs_grad(target), [=](Tape& t, Id self) {
    const Tensor& gy = t.grad(self);
    const float* pp = t.value(pred).data();
    const float* pt = t.value(target).data();
    float* gp = t.needs_grad(pred) ? t.grad_buffer(pred).data() : nullptr;
    float* gt = t.needs_grad(target) ? t.grad_buffer(target).data() : nullptr;
    for (int64_t i = 0; i < total; ++i) {
      const float r = pp[i] - pt[i];
      const float d = std::clamp(r, -delta, delta) * gy[i];
      if (gp) gp[i] += d;
      if (gt) gt[i] -= d;
    }
  });
}

void Tape::backward(Id root) {
  if (value(root).size() != 1)
    throw std::invalid_argument("backward: root must be scalar, got " + value(root).shape().str());
  grad_buffer(root)[0] = 1.0f;
  for (Id id = root; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.needs_grad || !n.backward_fn) continue;
    if (n.grad.size() == 0) continue;  // not reachable from root
    n.backward_fn(*this, id);
  }
}

double grad_check(const std::function<Tape::Id(Tape&, const std::vector<Tape::Id>&)>& build,
                  std::vector<Tensor> params, double h) {
  std::vector<Tensor> tape_grads;
  {
    Tape tape;
    std::vector<Tape::Id> ids;
    ids.reserve(params.size());
    for (auto& p : params) ids.push_back(tape.leaf(p, true));
    Tape::Id root = build(tape, ids);
    if (!std::isfinite(tape.value(root)[0]))
      throw std::runtime_error("grad_check: non-finite objective");
    tape.backward(root);
    for (auto id : ids) {
      const Tensor& g = tape.grad(id);
      tape_grads.push_back(g.size() ? g : Tensor::zeros(tape.value(id).shape()));
    }
  }

  auto eval = [&](const std::vector<Tensor>& p) {
    Tape tape;
    std::vector<Tape::Id> ids;
    ids.reserve(p.size());
    for (const auto& t : p) ids.push_back(tape.leaf(t, false));
    return static_cast<double>(tape.value(build(tape, ids))[0]);
  };

  double max_rel = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    for (int64_t i = 0; i < params[pi].size(); ++i) {
      const float orig = params[pi][i];
      params[pi][i] = static_cast<float>(orig + h);
      const double fp = eval(params);
      params[pi][i] = static_cast<float>(orig - h);
      const double fm = eval(params);
      params[pi][i] = orig;
      const double g_fd = (fp - fm) / (2.0 * h);
      const double g_tape = tape_grads[pi][i];
      const double denom = std::max({1.0, std::abs(g_fd), std::abs(g_tape)});
      max_rel = std::max(max_rel, std::abs(g_fd - g_tape) / denom);
    }
  }
  return max_rel;
}

}  // namespace v2xmd::nn
