#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace t2d {

// Dense row-major tensor. Rank <= 4 in practice: [C,H,W], [N,D], [N,C,H,W].
template <class T>
class TensorT {
 public:
  using value_type = T;

  TensorT() = default;

  explicit TensorT(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(numel_of(shape_), T(0));
  }

  TensorT(std::initializer_list<int> shape, T fill = T(0))
      : shape_(shape) {
    data_.assign(numel_of(shape_), fill);
  }

  static TensorT zeros(std::vector<int> shape) { return TensorT(std::move(shape)); }

  static TensorT full(std::vector<int> shape, T v) {
    TensorT t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  static TensorT from(std::vector<int> shape, std::vector<T> data) {
    TensorT t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    if (t.data_.size() != static_cast<size_t>(numel_of(t.shape_)))
      throw std::invalid_argument("TensorT::from: data size does not match shape");
    return t;
  }

  bool empty() const { return data_.empty(); }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  const std::vector<int>& shape() const { return shape_; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  T& at(int i) { return data_[idx1(i)]; }
  const T& at(int i) const { return data_[idx1(i)]; }
  T& at(int i, int j) { return data_[idx2(i, j)]; }
  const T& at(int i, int j) const { return data_[idx2(i, j)]; }
  T& at(int i, int j, int k) { return data_[idx3(i, j, k)]; }
  const T& at(int i, int j, int k) const { return data_[idx3(i, j, k)]; }
  T& at(int i, int j, int k, int l) { return data_[idx4(i, j, k, l)]; }
  const T& at(int i, int j, int k, int l) const { return data_[idx4(i, j, k, l)]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  TensorT reshaped(std::vector<int> shape) const {
    if (numel_of(shape) != numel())
      throw std::invalid_argument("reshape: element count mismatch");
    TensorT t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  T min() const { return data_.empty() ? T(0) : *std::min_element(data_.begin(), data_.end()); }
  T max() const { return data_.empty() ? T(0) : *std::max_element(data_.begin(), data_.end()); }
  T sum() const { return std::accumulate(data_.begin(), data_.end(), T(0)); }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << "]";
    return os.str();
  }

  template <class U>
  TensorT<U> cast() const {
    TensorT<U> out;
    out = TensorT<U>::from(shape_, std::vector<U>(data_.begin(), data_.end()));
    return out;
  }

  static int64_t numel_of(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
      if (d < 0) throw std::invalid_argument("negative dimension");
      n *= d;
    }
    return shape.empty() ? 0 : n;
  }

 private:
  size_t idx1(int i) const {
    assert(rank() == 1);
    return static_cast<size_t>(i);
  }
  size_t idx2(int i, int j) const {
    assert(rank() == 2);
    return static_cast<size_t>(i) * shape_[1] + j;
  }
  size_t idx3(int i, int j, int k) const {
    assert(rank() == 3);
    return (static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k;
  }
  size_t idx4(int i, int j, int k, int l) const {
    assert(rank() == 4);
    return ((static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l;
  }

  std::vector<int> shape_;
  std::vector<T> data_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

}  // namespace t2d
