#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "ldseg/common.hpp"

namespace ldseg {

/// Dense row-major N-d array. The carrier for images, activations, parameters
/// and gradients. Plain value type: copy/move do what you expect.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::int64_t> shape) : shape_(std::move(shape)) {
    data_.assign(checked_numel(shape_), T{});
  }

  Tensor(std::vector<std::int64_t> shape, std::vector<T> values) : shape_(std::move(shape)) {
    if (static_cast<std::int64_t>(values.size()) != checked_numel(shape_))
      throw ShapeError("tensor: value count does not match shape");
    data_ = std::move(values);
  }

  static Tensor full(std::vector<std::int64_t> shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  std::int64_t ndim() const { return static_cast<std::int64_t>(shape_.size()); }
  std::int64_t dim(std::int64_t i) const { return shape_[static_cast<std::size_t>(i)]; }
  const std::vector<std::int64_t>& shape() const { return shape_; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  T& operator()(std::int64_t i, std::int64_t j) {
    assert(ndim() == 2);
    return data_[static_cast<std::size_t>(i * shape_[1] + j)];
  }
  const T& operator()(std::int64_t i, std::int64_t j) const {
    return const_cast<Tensor&>(*this)(i, j);
  }
  T& operator()(std::int64_t i, std::int64_t j, std::int64_t k) {
    assert(ndim() == 3);
    return data_[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  const T& operator()(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return const_cast<Tensor&>(*this)(i, j, k);
  }
  T& operator()(std::int64_t i, std::int64_t j, std::int64_t k, std::int64_t l) {
    assert(ndim() == 4);
    return data_[static_cast<std::size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
  }
  const T& operator()(std::int64_t i, std::int64_t j, std::int64_t k, std::int64_t l) const {
    return const_cast<Tensor&>(*this)(i, j, k, l);
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::int64_t i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[static_cast<std::size_t>(i)]);
    return out;
  }

 private:
  static std::int64_t checked_numel(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (std::int64_t d : shape) {
      if (d <= 0) throw ShapeError("tensor: dimensions must be positive");
      if (n > (std::int64_t{1} << 40) / d) throw ShapeError("tensor: shape too large");
      n *= d;
    }
    return n;
  }

  std::vector<std::int64_t> shape_;
  std::vector<T> data_;
};

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (std::int64_t i = 0; i < t.numel(); ++i)
    if (!std::isfinite(static_cast<double>(t[i]))) return false;
  return true;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) throw ShapeError("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

inline std::string shape_str(const std::vector<std::int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

}  // namespace ldseg
