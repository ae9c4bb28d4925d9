#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace v2xmd::nn {

// Shape of a dense tensor, rank 1..3 (batch x time x feature at most).
struct Shape {
  int ndim = 1;
  std::array<int, 3> d = {1, 1, 1};

  Shape() = default;
  Shape(int a) : ndim(1), d{a, 1, 1} {}
  Shape(int a, int b) : ndim(2), d{a, b, 1} {}
  Shape(int a, int b, int c) : ndim(3), d{a, b, c} {}

  int64_t size() const {
    int64_t n = 1;
    for (int i = 0; i < ndim; ++i) n *= d[i];
    return n;
  }
  int operator[](int i) const { return d[i]; }
  bool operator==(const Shape& o) const {
    if (ndim != o.ndim) return false;
    for (int i = 0; i < ndim; ++i)
      if (d[i] != o.d[i]) return false;
    return true;
  }
  // trailing matrix dims, with everything before folded into a batch count
  int rows() const { return ndim >= 2 ? d[ndim - 2] : 1; }
  int cols() const { return d[ndim - 1]; }
  int64_t batch() const { return ndim == 3 ? d[0] : 1; }

  std::string str() const {
    std::string s = "[";
    for (int i = 0; i < ndim; ++i) s += (i ? "x" : "") + std::to_string(d[i]);
    return s + "]";
  }
};

// Dense float32 tensor. Reductions accumulate in double.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(shape), data_(shape.size(), 0.0f) {}
  Tensor(Shape shape, std::vector<float> values) : shape_(shape), data_(std::move(values)) {
    if (static_cast<int64_t>(data_.size()) != shape_.size())
      throw std::invalid_argument("Tensor: value count " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_.str());
  }

  static Tensor zeros(Shape s) { return Tensor(s); }
  static Tensor full(Shape s, float v) {
    Tensor t(s);
    for (auto& x : t.data_) x = v;
    return t;
  }
  static Tensor scalar(float v) { return Tensor(Shape(1), {v}); }

  const Shape& shape() const { return shape_; }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  float& operator[](int64_t i) { return data_[i]; }
  float operator[](int64_t i) const { return data_[i]; }

  float& at(int i, int j) { return data_[(int64_t)i * shape_.cols() + j]; }
  float at(int i, int j) const { return data_[(int64_t)i * shape_.cols() + j]; }
  float& at(int b, int i, int j) {
    return data_[((int64_t)b * shape_.d[1] + i) * shape_.d[2] + j];
  }
  float at(int b, int i, int j) const {
    return data_[((int64_t)b * shape_.d[1] + i) * shape_.d[2] + j];
  }

  bool finite() const {
    for (float v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double sum64() const {
    double s = 0;
    for (float v : data_) s += v;
    return s;
  }

  Tensor reshaped(Shape s) const {
    if (s.size() != shape_.size())
      throw std::invalid_argument("reshape: element count mismatch " + shape_.str() + " -> " + s.str());
    Tensor t = *this;
    t.shape_ = s;
    return t;
  }

 private:
  Shape shape_;
  std::vector<float> data_;
};

}  // namespace v2xmd::nn
