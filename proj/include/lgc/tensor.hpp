#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <string>
#include <type_traits>
#include <vector>

#include "lgc/common.hpp"

namespace lgc::nn {

// Allocator that default-initializes on resize (no zero-fill for trivial T).
// Used by Tensor so fully-overwritten op outputs can skip initialization.
template <typename T>
struct DefaultInitAlloc : std::allocator<T> {
  template <typename U>
  struct rebind {
    using other = DefaultInitAlloc<U>;
  };
  template <typename U>
  void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>) {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

// Dense row-major tensor. Activations use NCHW order.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T, DefaultInitAlloc<T>> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), T{});
  }
  Tensor(std::vector<int> s, T fill) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), fill);
  }
  Tensor(std::vector<int> s, std::vector<T, DefaultInitAlloc<T>> d)
      : shape(std::move(s)), data(std::move(d)) {
    check(static_cast<int64_t>(data.size()) == numel_of(shape), "tensor data does not match shape");
  }

  // Output buffer for ops that overwrite every element: skips the zero-fill.
  static Tensor uninit(std::vector<int> s) {
    Tensor t;
    t.shape = std::move(s);
    t.data.resize(static_cast<size_t>(numel_of(t.shape)));
    return t;
  }

  static int64_t numel_of(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
      check(d >= 0, "negative tensor dimension");
      n *= d;
    }
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  // NCHW accessor.
  T& at(int n, int c, int h, int w) {
    return data[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  const T& at(int n, int c, int h, int w) const {
    return data[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  T& at(int n, int c) { return data[static_cast<size_t>(n) * shape[1] + c]; }
  const T& at(int n, int c) const { return data[static_cast<size_t>(n) * shape[1] + c]; }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (const T& v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape);
    for (size_t i = 0; i < data.size(); i++) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

  std::string shape_str() const {
    std::string s = "(";
    for (size_t i = 0; i < shape.size(); i++) {
      if (i) s += ",";
      s += std::to_string(shape[i]);
    }
    return s + ")";
  }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;
using TensorI = Tensor<int32_t>;

}  // namespace lgc::nn
