#pragma once

#include <algorithm>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <vector>

#include "lvmark/common.hpp"

namespace lvmark::nn {

// Dense row-major tensor with value semantics. Rank is dynamic (<= 5 in
// practice: [B, C, F, H, W]). All math kernels in the library operate on
// contiguous storage.
template <class T>
class TensorT {
 public:
  TensorT() = default;

  explicit TensorT(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(numel_of(shape_)), T(0));
  }

  TensorT(std::vector<int> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    require(static_cast<std::int64_t>(data_.size()) == numel_of(shape_),
            "tensor data size does not match shape");
  }

  static TensorT zeros(std::vector<int> shape) { return TensorT(std::move(shape)); }

  static TensorT full(std::vector<int> shape, T value) {
    TensorT t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  static TensorT scalar(T value) { return full({1}, value); }

  static std::int64_t numel_of(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
      require(d >= 0, "negative tensor dimension");
      n *= d;
    }
    return n;
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

  // Exact elementwise equality (used by locality/determinism contracts).
  bool equals(const TensorT& o) const { return shape_ == o.shape_ && data_ == o.data_; }
  friend bool operator==(const TensorT& a, const TensorT& b) { return a.equals(b); }
  friend bool operator!=(const TensorT& a, const TensorT& b) { return !a.equals(b); }

  TensorT reshaped(std::vector<int> shape) const {
    require(numel_of(shape) == numel(), "reshape changes element count");
    return TensorT(std::move(shape), data_);
  }

  double sum() const {
    double s = 0.0;
    for (const T& v : data_) s += static_cast<double>(v);
    return s;
  }

  T min() const { return data_.empty() ? T(0) : *std::min_element(data_.begin(), data_.end()); }
  T max() const { return data_.empty() ? T(0) : *std::max_element(data_.begin(), data_.end()); }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
    os << ']';
    return os.str();
  }

 private:
  std::vector<int> shape_;
  std::vector<T> data_;
};

using Tensor = TensorT<float>;

template <class T>
double max_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
  require(a.same_shape(b), "max_abs_diff: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

template <class T>
TensorT<T> random_uniform(std::vector<int> shape, Rng& rng, T lo = T(-1), T hi = T(1)) {
  TensorT<T> t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<T>(rng.uniform(static_cast<double>(lo), static_cast<double>(hi)));
  return t;
}

template <class T>
TensorT<T> random_normal(std::vector<int> shape, Rng& rng, double mean = 0.0, double stddev = 1.0) {
  TensorT<T> t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.normal(mean, stddev));
  return t;
}

}  // namespace lvmark::nn
