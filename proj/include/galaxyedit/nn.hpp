#pragma once

// Minimal layer set for the toy diffusion U-Net: each layer has a pure
// forward and an explicit backward that accumulates into its own gradients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "galaxyedit/conv.hpp"
#include "galaxyedit/tensor.hpp"

namespace galaxyedit {

template <typename T>
struct Param {
  Tensor<T> value;
  Tensor<T> grad;

  Param() = default;
  explicit Param(Shape s) : value(s), grad(s) {}
};

/// Non-owning view of one trainable array and its gradient.
template <typename T>
struct ParamRef {
  std::string name;
  std::span<T> value;
  std::span<T> grad;
  bool clamp_unit = false;  // projected onto [0, 1] after every update
};

template <typename T>
ParamRef<T> ref(const std::string& name, Param<T>& p) {
  return {name, p.value.span(), p.grad.span(), false};
}

template <typename T>
void init_normal(Tensor<T>& t, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, stddev);
  for (auto& v : t.vec()) v = static_cast<T>(d(rng));
}

template <typename T>
struct Conv2d {
  Param<T> weight;
  Param<T> bias;
  ConvGeometry geom;
  bool trainable = true;

  Conv2d() = default;
  Conv2d(int c_in, int c_out, int k, int stride, std::mt19937_64& rng, double gain = 1.0)
      : weight(Shape{c_out, c_in, k, k}), bias(Shape{c_out, 1, 1, 1}), geom(ConvGeometry::same(k, stride)) {
    init_normal(weight.value, gain / std::sqrt(static_cast<double>(c_in * k * k)), rng);
  }

  int c_in() const { return weight.value.c(); }
  int c_out() const { return weight.value.n(); }

  Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, weight.value, bias.value, geom); }

  /// Returns dx when `need_dx`; accumulates weight/bias gradients when trainable.
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& dy, bool need_dx) {
    Tensor<T> dx;
    conv2d_backward(x, weight.value, dy, geom, need_dx ? &dx : nullptr, trainable ? &weight.grad : nullptr,
                    trainable ? &bias.grad : nullptr);
    return dx;
  }

  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    out.push_back(ref(prefix + ".weight", weight));
    out.push_back(ref(prefix + ".bias", bias));
  }
};

/// Dense layer on [B, D, 1, 1] tensors, i.e. a pointwise convolution.
template <typename T>
struct Linear : Conv2d<T> {
  Linear() = default;
  Linear(int d_in, int d_out, std::mt19937_64& rng, double gain = 1.0) : Conv2d<T>(d_in, d_out, 1, 1, rng, gain) {}
};

template <typename T>
inline T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * sigmoid(x[i]);
  return y;
}

/// dL/dx given the pre-activation x and dL/dy.
template <typename T>
Tensor<T> silu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
  Tensor<T> dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T s = sigmoid(x[i]);
    dx[i] = dy[i] * s * (T(1) + x[i] * (T(1) - s));
  }
  return dx;
}

/// Adds a per-(sample, channel) vector [B, C, 1, 1] across the spatial plane.
template <typename T>
void add_channel_bias(Tensor<T>& x, const Tensor<T>& v) {
  if (v.n() != x.n() || v.c() != x.c()) throw ShapeError("add_channel_bias: " + v.shape().str() + " vs " + x.shape().str());
  const int plane = x.h() * x.w();
  for (int b = 0; b < x.n(); ++b)
    for (int c = 0; c < x.c(); ++c) {
      T* p = x.data() + x.index(b, c, 0, 0);
      const T add = v.at(b, c, 0, 0);
      for (int i = 0; i < plane; ++i) p[i] += add;
    }
}

/// Backward of add_channel_bias: spatial sums of dy.
template <typename T>
Tensor<T> channel_sums(const Tensor<T>& dy) {
  Tensor<T> out(dy.n(), dy.c(), 1, 1);
  const int plane = dy.h() * dy.w();
  for (int b = 0; b < dy.n(); ++b)
    for (int c = 0; c < dy.c(); ++c) {
      const T* p = dy.data() + dy.index(b, c, 0, 0);
      T s = 0;
      for (int i = 0; i < plane; ++i) s += p[i];
      out.at(b, c, 0, 0) = s;
    }
  return out;
}

template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x) {
  Tensor<T> y(x.n(), x.c(), x.h() * 2, x.w() * 2);
  for (int b = 0; b < x.n(); ++b)
    for (int c = 0; c < x.c(); ++c)
      for (int i = 0; i < y.h(); ++i)
        for (int j = 0; j < y.w(); ++j) y.at(b, c, i, j) = x.at(b, c, i / 2, j / 2);
  return y;
}

template <typename T>
Tensor<T> upsample2x_backward(const Tensor<T>& dy) {
  Tensor<T> dx(dy.n(), dy.c(), dy.h() / 2, dy.w() / 2);
  for (int b = 0; b < dy.n(); ++b)
    for (int c = 0; c < dy.c(); ++c)
      for (int i = 0; i < dy.h(); ++i)
        for (int j = 0; j < dy.w(); ++j) dx.at(b, c, i / 2, j / 2) += dy.at(b, c, i, j);
  return dx;
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clamped_lr_scale = 1.0;  // multiplier for clamp_unit parameters
};

/// Adaptive-moment optimizer over a fixed, ordered parameter list.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(const std::vector<ParamRef<T>>& params) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.value.size(), 0.0);
        v_.emplace_back(p.value.size(), 0.0);
      }
    }
    if (m_.size() != params.size()) throw std::logic_error("Adam: parameter list changed between steps");
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < p.value.size(); ++j) {
        const double g = p.grad[j];
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
        const double lr = p.clamp_unit ? cfg_.lr * cfg_.clamped_lr_scale : cfg_.lr;
        const double update = lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg_.eps);
        double nv = static_cast<double>(p.value[j]) - update;
        if (p.clamp_unit) nv = std::clamp(nv, 0.0, 1.0);
        p.value[j] = static_cast<T>(nv);
      }
    }
  }

  std::int64_t steps() const { return t_; }
  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t t_ = 0;
};

template <typename T>
void zero_grads(const std::vector<ParamRef<T>>& params) {
  for (const auto& p : params) std::fill(p.grad.begin(), p.grad.end(), T(0));
}

}  // namespace galaxyedit
