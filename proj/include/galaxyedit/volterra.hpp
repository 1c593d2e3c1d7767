#pragma once

// Second-order Volterra layer with a rank-Q factored quadratic kernel:
//
//   y = W1 (*) x + sum_q (Wa_q (*) x) . (Wb_q (*) x)
//
// where (*) is 2-D convolution and . the elementwise product. Both factor
// convolutions of a pair see the same input.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "galaxyedit/conv.hpp"
#include "galaxyedit/tensor.hpp"

namespace galaxyedit {

inline constexpr int kDefaultVolterraRank = 2;

template <typename T>
struct VolterraLayerParams {
  Tensor<T> w1;
  std::vector<Tensor<T>> w2a;
  std::vector<Tensor<T>> w2b;
  int rank_q = 0;
  int stride = 1;
  int padding = 0;

  int c_out() const { return w1.n(); }
  int c_in() const { return w1.c(); }
  int kernel() const { return w1.h(); }
  ConvGeometry geometry() const { return {stride, padding}; }

  /// Visits (name, kernel) pairs in the canonical flat order: w1, w2a[*], w2b[*].
  template <typename F>
  void for_each_kernel(F&& f) {
    f(std::string("w1"), w1);
    for (int q = 0; q < rank_q; ++q) f("w2a." + std::to_string(q), w2a[q]);
    for (int q = 0; q < rank_q; ++q) f("w2b." + std::to_string(q), w2b[q]);
  }
  template <typename F>
  void for_each_kernel(F&& f) const {
    f(std::string("w1"), w1);
    for (int q = 0; q < rank_q; ++q) f("w2a." + std::to_string(q), w2a[q]);
    for (int q = 0; q < rank_q; ++q) f("w2b." + std::to_string(q), w2b[q]);
  }

  template <typename U>
  VolterraLayerParams<U> cast() const {
    VolterraLayerParams<U> out;
    out.w1 = w1.template cast<U>();
    for (const auto& t : w2a) out.w2a.push_back(t.template cast<U>());
    for (const auto& t : w2b) out.w2b.push_back(t.template cast<U>());
    out.rank_q = rank_q;
    out.stride = stride;
    out.padding = padding;
    return out;
  }
};

/// Throws ShapeError if rank/kernel shapes are inconsistent.
template <typename T>
void validate(const VolterraLayerParams<T>& p);

/// Every entry exactly zero, "same" zero padding, stride 1.
template <typename T>
VolterraLayerParams<T> init_zero(int c_in, int c_out, int k, int rank_q);

/// Zero-output initialization used for trainable bridges: W1 and every Wb_q
/// are zero, Wa_q are drawn from N(0, scale^2). The layer output is exactly
/// zero, but the quadratic factors are not stuck at the all-zero saddle.
template <typename T>
VolterraLayerParams<T> init_zero_output(int c_in, int c_out, int k, int rank_q, std::mt19937_64& rng,
                                        T scale);

/// C_out * C_in * k^2 * (1 + 2Q)
template <typename T>
std::int64_t param_count(const VolterraLayerParams<T>& p);

/// Per-sample factor responses kept from the forward pass for backward.
template <typename T>
struct VolterraCache {
  // [B, C_out*(1+2Q), H'*W'] stacked as (w1, a_1..a_Q, b_1..b_Q).
  std::vector<T> responses;
};

template <typename T>
Tensor<T> volterra_forward(const Tensor<T>& x, const VolterraLayerParams<T>& p,
                           VolterraCache<T>* cache = nullptr);

/// Accumulates parameter gradients into `grads` (same layout as `p`, may be
/// null) and writes the input gradient into `dx` (may be null).
template <typename T>
void volterra_backward(const Tensor<T>& x, const VolterraLayerParams<T>& p, const Tensor<T>& dy,
                       const VolterraCache<T>* cache, VolterraLayerParams<T>* grads, Tensor<T>* dx);

/// Zero tensors shaped like `p`.
template <typename T>
VolterraLayerParams<T> zeros_like(const VolterraLayerParams<T>& p);

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;  // e.g. "w2a.1[17]"
  bool ok = true;               // false if any gradient was non-finite
  std::string failure;
};

/// Central-difference check of d(sum(volterra_forward(x, p)))/dp. Relative
/// error per entry is |analytic - numeric| / max(|analytic|, |numeric|, 1).
GradCheckResult gradient_check(const VolterraLayerParams<double>& p, const Tensor<double>& x, double eps);

}  // namespace galaxyedit
