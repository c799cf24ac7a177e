#pragma once

// Dense row-major tensor of rank 1..4, templated on the scalar type.
// float is used for training, double for numeric oracles in the tests.

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace kamp {

// Thrown when an operation is called on an object in the wrong state
// (frozen model asked to train, bundle step out of range, ...).
class invalid_state : public std::runtime_error {
 public:
  explicit invalid_state(const std::string& what) : std::runtime_error(what) {}
};

template <typename T>
class TensorT {
 public:
  TensorT() = default;

  explicit TensorT(std::vector<int> shape) : shape_(std::move(shape)) {
    size_t n = 1;
    for (int d : shape_) {
      if (d < 0) throw std::invalid_argument("tensor: negative dimension");
      n *= static_cast<size_t>(d);
    }
    data_.assign(n, T(0));
  }

  TensorT(std::initializer_list<int> shape) : TensorT(std::vector<int>(shape)) {}

  static TensorT zeros(std::vector<int> shape) { return TensorT(std::move(shape)); }

  static TensorT full(std::vector<int> shape, T value) {
    TensorT t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  int rank() const { return static_cast<int>(shape_.size()); }
  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](size_t i) { return data_[i]; }
  const T& operator[](size_t i) const { return data_[i]; }

  // Rank-checked accessors (row-major).
  T& at(int a) { return data_[index1(a)]; }
  const T& at(int a) const { return data_[index1(a)]; }
  T& at(int a, int b) { return data_[index2(a, b)]; }
  const T& at(int a, int b) const { return data_[index2(a, b)]; }
  T& at(int a, int b, int c) { return data_[index3(a, b, c)]; }
  const T& at(int a, int b, int c) const { return data_[index3(a, b, c)]; }
  T& at(int a, int b, int c, int d) { return data_[index4(a, b, c, d)]; }
  const T& at(int a, int b, int c, int d) const { return data_[index4(a, b, c, d)]; }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

  void add_(const TensorT& other) {
    require_same_shape(other);
    for (size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  }

  void scale_(T s) {
    for (auto& v : data_) v *= s;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out(shape_);
    for (size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  void require_rank(int r) const {
    if (rank() != r)
      throw std::invalid_argument("tensor: rank " + std::to_string(rank()) +
                                  " used as rank " + std::to_string(r));
  }
  void require_same_shape(const TensorT& other) const {
    if (!same_shape(other))
      throw std::invalid_argument("tensor: shape mismatch " + shape_str() + " vs " +
                                  other.shape_str());
  }
  size_t index1(int a) const {
    require_rank(1);
    return static_cast<size_t>(a);
  }
  size_t index2(int a, int b) const {
    require_rank(2);
    return static_cast<size_t>(a) * shape_[1] + b;
  }
  size_t index3(int a, int b, int c) const {
    require_rank(3);
    return (static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c;
  }
  size_t index4(int a, int b, int c, int d) const {
    require_rank(4);
    return ((static_cast<size_t>(a) * shape_[1] + b) * static_cast<size_t>(shape_[2]) + c) *
               shape_[3] +
           d;
  }

  std::vector<int> shape_;
  std::vector<T> data_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

}  // namespace kamp
