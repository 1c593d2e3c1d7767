#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "galaxyedit/errors.hpp"

namespace galaxyedit {

/// NCHW shape. Vectors (embeddings, biases) use H = W = 1.
struct Shape {
  int n = 0, c = 0, h = 0, w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Dense row-major NCHW array. Used for activations, kernels and gradients.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape_(s), data_(s.numel(), fill) {}
  Tensor(int n, int c, int h, int w, T fill = T(0)) : Tensor(Shape{n, c, h, w}, fill) {}

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t index(int b, int ch, int y, int x) const {
    return ((static_cast<std::size_t>(b) * shape_.c + ch) * shape_.h + y) * shape_.w + x;
  }
  T& at(int b, int ch, int y, int x) { return data_[index(b, ch, y, x)]; }
  const T& at(int b, int ch, int y, int x) const { return data_[index(b, ch, y, x)]; }

  /// Pointer to the start of sample `b`.
  T* sample(int b) { return data_.data() + static_cast<std::size_t>(b) * shape_.c * shape_.h * shape_.w; }
  const T* sample(int b) const {
    return data_.data() + static_cast<std::size_t>(b) * shape_.c * shape_.h * shape_.w;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  Shape shape_{};
  std::vector<T> data_;
};

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape " + a.shape().str() + " vs " + b.shape().str());
}

/// a += b
template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add_inplace");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

/// a += s * b
template <typename T>
void axpy_inplace(Tensor<T>& a, T s, const Tensor<T>& b) {
  require_same_shape(a, b, "axpy_inplace");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += s * b[i];
}

template <typename T>
Tensor<T> scaled(const Tensor<T>& a, T s) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = s * a[i];
  return out;
}

/// Channel concatenation [a, b] along C.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w())
    throw ShapeError("concat_channels: spatial/batch mismatch " + a.shape().str() + " vs " + b.shape().str());
  Tensor<T> out(a.n(), a.c() + b.c(), a.h(), a.w());
  const std::size_t plane = static_cast<std::size_t>(a.h()) * a.w();
  for (int n = 0; n < a.n(); ++n) {
    std::copy_n(a.sample(n), a.c() * plane, out.sample(n));
    std::copy_n(b.sample(n), b.c() * plane, out.sample(n) + a.c() * plane);
  }
  return out;
}

/// Inverse of concat_channels: splits `g` into the first `ca` and remaining channels.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& g, int ca) {
  const int cb = g.c() - ca;
  if (ca < 0 || cb < 0) throw ShapeError("split_channels: bad split " + std::to_string(ca));
  Tensor<T> a(g.n(), ca, g.h(), g.w()), b(g.n(), cb, g.h(), g.w());
  const std::size_t plane = static_cast<std::size_t>(g.h()) * g.w();
  for (int n = 0; n < g.n(); ++n) {
    std::copy_n(g.sample(n), ca * plane, a.sample(n));
    std::copy_n(g.sample(n) + ca * plane, cb * plane, b.sample(n));
  }
  return {std::move(a), std::move(b)};
}

}  // namespace galaxyedit
