#pragma once

// 2-D convolution over NCHW tensors via im2col + GEMM.
// Kernels are [C_out, C_in, k, k]; a kernel viewed as a row-major matrix is
// C_out x (C_in*k*k), matching the im2col row order (ci, ky, kx).

#include <Eigen/Core>
#include <string>

#include "galaxyedit/tensor.hpp"

namespace galaxyedit {

struct ConvGeometry {
  int stride = 1;
  int padding = 0;

  /// Zero-padded "same" geometry for an odd kernel.
  static ConvGeometry same(int k, int stride = 1) { return {stride, k / 2}; }

  int out_size(int in, int k) const { return (in + 2 * padding - k) / stride + 1; }
};

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

namespace detail {

template <typename T>
void im2col(const T* x, int c, int h, int w, int k, ConvGeometry g, int ho, int wo, T* col) {
  const int plane = ho * wo;
  for (int ci = 0; ci < c; ++ci) {
    const T* xc = x + static_cast<std::size_t>(ci) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + static_cast<std::size_t>((ci * k + ky) * k + kx) * plane;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * g.stride - g.padding + ky;
          T* dst = row + oy * wo;
          if (iy < 0 || iy >= h) {
            std::fill_n(dst, wo, T(0));
            continue;
          }
          const T* src = xc + iy * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * g.stride - g.padding + kx;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, int c, int h, int w, int k, ConvGeometry g, int ho, int wo, T* dx) {
  const int plane = ho * wo;
  for (int ci = 0; ci < c; ++ci) {
    T* dxc = dx + static_cast<std::size_t>(ci) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + static_cast<std::size_t>((ci * k + ky) * k + kx) * plane;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * g.stride - g.padding + ky;
          if (iy < 0 || iy >= h) continue;
          const T* src = row + oy * wo;
          T* dst = dxc + iy * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * g.stride - g.padding + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

inline bool is_pointwise(int k, ConvGeometry g) { return k == 1 && g.stride == 1 && g.padding == 0; }

}  // namespace detail

/// Column buffer for one sample; reused across the batch.
template <typename T>
class ColumnBuffer {
 public:
  /// Returns the im2col matrix for sample `b` of `x` (K x HoWo, row-major).
  ConstMatMap<T> fill(const Tensor<T>& x, int b, int k, ConvGeometry g) {
    const int ho = g.out_size(x.h(), k), wo = g.out_size(x.w(), k);
    const int rows = x.c() * k * k;
    if (detail::is_pointwise(k, g)) return ConstMatMap<T>(x.sample(b), rows, ho * wo);
    buf_.resize(static_cast<std::size_t>(rows) * ho * wo);
    detail::im2col(x.sample(b), x.c(), x.h(), x.w(), k, g, ho, wo, buf_.data());
    return ConstMatMap<T>(buf_.data(), rows, ho * wo);
  }

 private:
  std::vector<T> buf_;
};

inline void check_conv_shapes(const Shape& x, const Shape& weight, ConvGeometry g, const char* who) {
  if (weight.h != weight.w)
    throw ShapeError(std::string(who) + ": kernel must be square, got " + weight.str());
  if (x.c != weight.c)
    throw ShapeError(std::string(who) + ": input channels C_in=" + std::to_string(x.c) +
                     " but kernel expects C_in=" + std::to_string(weight.c));
  if (g.stride < 1 || g.padding < 0)
    throw ShapeError(std::string(who) + ": stride must be >= 1 and padding >= 0");
  if (x.h + 2 * g.padding < weight.h)
    throw ShapeError(std::string(who) + ": height H=" + std::to_string(x.h) + " too small for kernel");
  if (x.w + 2 * g.padding < weight.w)
    throw ShapeError(std::string(who) + ": width W=" + std::to_string(x.w) + " too small for kernel");
}

/// y = weight (*) x + bias. `bias` may be empty.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, ConvGeometry g) {
  check_conv_shapes(x.shape(), weight.shape(), g, "conv2d");
  const int k = weight.h();
  const int ho = g.out_size(x.h(), k), wo = g.out_size(x.w(), k);
  const int co = weight.n();
  Tensor<T> y(x.n(), co, ho, wo);
  ConstMatMap<T> wm(weight.data(), co, x.c() * k * k);
  ColumnBuffer<T> cols;
  for (int b = 0; b < x.n(); ++b) {
    auto col = cols.fill(x, b, k, g);
    MatMap<T> ym(y.sample(b), co, ho * wo);
    ym.noalias() = wm * col;
    if (!bias.empty())
      for (int o = 0; o < co; ++o) ym.row(o).array() += bias[o];
  }
  return y;
}

/// Backward of conv2d. Any of dx/dweight/dbias may be null; weight and bias
/// gradients are accumulated, dx is overwritten.
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy, ConvGeometry g,
                     Tensor<T>* dx, Tensor<T>* dweight, Tensor<T>* dbias) {
  const int k = weight.h();
  const int ho = dy.h(), wo = dy.w();
  const int co = weight.n();
  const int rows = x.c() * k * k;
  ConstMatMap<T> wm(weight.data(), co, rows);
  if (dx) *dx = Tensor<T>(x.shape());
  ColumnBuffer<T> cols;
  std::vector<T> dcol;
  for (int b = 0; b < x.n(); ++b) {
    ConstMatMap<T> dym(dy.sample(b), co, ho * wo);
    if (dweight) {
      auto col = cols.fill(x, b, k, g);
      MatMap<T> dwm(dweight->data(), co, rows);
      dwm.noalias() += dym * col.transpose();
    }
    if (dbias)
      for (int o = 0; o < co; ++o) (*dbias)[o] += dym.row(o).sum();
    if (dx) {
      if (detail::is_pointwise(k, g)) {
        MatMap<T> dxm(dx->sample(b), rows, ho * wo);
        dxm.noalias() = wm.transpose() * dym;
      } else {
        dcol.resize(static_cast<std::size_t>(rows) * ho * wo);
        MatMap<T> dcm(dcol.data(), rows, ho * wo);
        dcm.noalias() = wm.transpose() * dym;
        detail::col2im(dcol.data(), x.c(), x.h(), x.w(), k, g, ho, wo, dx->sample(b));
      }
    }
  }
}

}  // namespace galaxyedit
