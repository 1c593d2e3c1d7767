#include "galaxyedit/volterra.hpp"

#include <algorithm>
#include <cmath>

namespace galaxyedit {

std::string Shape::str() const {
  return "[" + std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w) + "]";
}

template <typename T>
void validate(const VolterraLayerParams<T>& p) {
  if (p.rank_q < 1) throw ShapeError("volterra: rank_q must be >= 1, got " + std::to_string(p.rank_q));
  if (static_cast<int>(p.w2a.size()) != p.rank_q || static_cast<int>(p.w2b.size()) != p.rank_q)
    throw ShapeError("volterra: expected " + std::to_string(p.rank_q) + " factor pairs, got w2a=" +
                     std::to_string(p.w2a.size()) + " w2b=" + std::to_string(p.w2b.size()));
  const Shape& s = p.w1.shape();
  if (s.h != s.w) throw ShapeError("volterra: kernel must be square, got " + s.str());
  for (int q = 0; q < p.rank_q; ++q) {
    if (p.w2a[q].shape() != s)
      throw ShapeError("volterra: w2a." + std::to_string(q) + " shape " + p.w2a[q].shape().str() + " != w1 " + s.str());
    if (p.w2b[q].shape() != s)
      throw ShapeError("volterra: w2b." + std::to_string(q) + " shape " + p.w2b[q].shape().str() + " != w1 " + s.str());
  }
  if (p.stride < 1 || p.padding < 0) throw ShapeError("volterra: invalid stride/padding");
}

template <typename T>
VolterraLayerParams<T> init_zero(int c_in, int c_out, int k, int rank_q) {
  if (c_in <= 0) throw ShapeError("init_zero: c_in must be positive");
  if (c_out <= 0) throw ShapeError("init_zero: c_out must be positive");
  if (k <= 0) throw ShapeError("init_zero: kernel size must be positive");
  if (rank_q <= 0) throw ShapeError("init_zero: rank_q must be positive");
  VolterraLayerParams<T> p;
  p.w1 = Tensor<T>(c_out, c_in, k, k);
  for (int q = 0; q < rank_q; ++q) {
    p.w2a.emplace_back(c_out, c_in, k, k);
    p.w2b.emplace_back(c_out, c_in, k, k);
  }
  p.rank_q = rank_q;
  p.stride = 1;
  p.padding = k / 2;
  return p;
}

template <typename T>
VolterraLayerParams<T> init_zero_output(int c_in, int c_out, int k, int rank_q, std::mt19937_64& rng, T scale) {
  auto p = init_zero<T>(c_in, c_out, k, rank_q);
  std::normal_distribution<double> dist(0.0, static_cast<double>(scale));
  for (auto& a : p.w2a)
    for (auto& v : a.vec()) v = static_cast<T>(dist(rng));
  return p;
}

template <typename T>
std::int64_t param_count(const VolterraLayerParams<T>& p) {
  const std::int64_t k = p.w1.h();
  return static_cast<std::int64_t>(p.w1.n()) * p.w1.c() * k * k * (1 + 2 * static_cast<std::int64_t>(p.rank_q));
}

template <typename T>
VolterraLayerParams<T> zeros_like(const VolterraLayerParams<T>& p) {
  VolterraLayerParams<T> z = p;
  z.for_each_kernel([](const std::string&, Tensor<T>& t) { t.fill(T(0)); });
  return z;
}

namespace {

// Rows: w1 (C_out), a_1..a_Q (Q*C_out), b_1..b_Q (Q*C_out).
template <typename T>
RowMatrix<T> stacked_kernels(const VolterraLayerParams<T>& p) {
  const int co = p.c_out();
  const int rows = p.c_in() * p.kernel() * p.kernel();
  RowMatrix<T> m(co * (1 + 2 * p.rank_q), rows);
  int r = 0;
  p.for_each_kernel([&](const std::string&, const Tensor<T>& t) {
    m.middleRows(r, co) = ConstMatMap<T>(t.data(), co, rows);
    r += co;
  });
  return m;
}

}  // namespace

template <typename T>
Tensor<T> volterra_forward(const Tensor<T>& x, const VolterraLayerParams<T>& p, VolterraCache<T>* cache) {
  validate(p);
  check_conv_shapes(x.shape(), p.w1.shape(), p.geometry(), "volterra_forward");
  if (!x.all_finite()) throw ShapeError("volterra_forward: input feature map has non-finite entries");

  const int k = p.kernel();
  const auto g = p.geometry();
  const int ho = g.out_size(x.h(), k), wo = g.out_size(x.w(), k);
  const int co = p.c_out();
  const int q_count = p.rank_q;
  const int plane = ho * wo;
  const int stacked = co * (1 + 2 * q_count);

  const RowMatrix<T> kernels = stacked_kernels(p);
  Tensor<T> y(x.n(), co, ho, wo);
  ColumnBuffer<T> cols;
  std::vector<T> local;
  if (cache) cache->responses.assign(static_cast<std::size_t>(x.n()) * stacked * plane, T(0));
  else local.resize(static_cast<std::size_t>(stacked) * plane);

  for (int b = 0; b < x.n(); ++b) {
    T* resp = cache ? cache->responses.data() + static_cast<std::size_t>(b) * stacked * plane : local.data();
    MatMap<T> rm(resp, stacked, plane);
    rm.noalias() = kernels * cols.fill(x, b, k, g);

    MatMap<T> ym(y.sample(b), co, plane);
    ym = rm.topRows(co);
    for (int q = 0; q < q_count; ++q) {
      ym.array() += rm.middleRows(co * (1 + q), co).array() * rm.middleRows(co * (1 + q_count + q), co).array();
    }
  }
  return y;
}

template <typename T>
void volterra_backward(const Tensor<T>& x, const VolterraLayerParams<T>& p, const Tensor<T>& dy,
                       const VolterraCache<T>* cache, VolterraLayerParams<T>* grads, Tensor<T>* dx) {
  validate(p);
  const int k = p.kernel();
  const auto g = p.geometry();
  const int co = p.c_out();
  const int q_count = p.rank_q;
  const int plane = dy.h() * dy.w();
  const int stacked = co * (1 + 2 * q_count);
  const int rows = p.c_in() * k * k;

  const RowMatrix<T> kernels = stacked_kernels(p);
  RowMatrix<T> dkernels = RowMatrix<T>::Zero(stacked, rows);
  RowMatrix<T> dresp(stacked, plane);
  std::vector<T> local(static_cast<std::size_t>(stacked) * plane);
  std::vector<T> dcol;
  ColumnBuffer<T> cols;
  if (dx) *dx = Tensor<T>(x.shape());

  for (int b = 0; b < x.n(); ++b) {
    auto col = cols.fill(x, b, k, g);
    const T* resp_ptr;
    if (cache && !cache->responses.empty()) {
      resp_ptr = cache->responses.data() + static_cast<std::size_t>(b) * stacked * plane;
    } else {
      MatMap<T> rm(local.data(), stacked, plane);
      rm.noalias() = kernels * col;
      resp_ptr = local.data();
    }
    ConstMatMap<T> rm(resp_ptr, stacked, plane);
    ConstMatMap<T> dym(dy.sample(b), co, plane);

    dresp.topRows(co) = dym;
    for (int q = 0; q < q_count; ++q) {
      const int ra = co * (1 + q), rb = co * (1 + q_count + q);
      dresp.middleRows(ra, co) = (dym.array() * rm.middleRows(rb, co).array()).matrix();
      dresp.middleRows(rb, co) = (dym.array() * rm.middleRows(ra, co).array()).matrix();
    }
    if (grads) dkernels.noalias() += dresp * col.transpose();
    if (dx) {
      if (detail::is_pointwise(k, g)) {
        MatMap<T> dxm(dx->sample(b), rows, plane);
        dxm.noalias() = kernels.transpose() * dresp;
      } else {
        dcol.resize(static_cast<std::size_t>(rows) * plane);
        MatMap<T> dcm(dcol.data(), rows, plane);
        dcm.noalias() = kernels.transpose() * dresp;
        detail::col2im(dcol.data(), x.c(), x.h(), x.w(), k, g, dy.h(), dy.w(), dx->sample(b));
      }
    }
  }

  if (grads) {
    int r = 0;
    grads->for_each_kernel([&](const std::string&, Tensor<T>& t) {
      MatMap<T>(t.data(), co, rows) += dkernels.middleRows(r, co);
      r += co;
    });
  }
}

GradCheckResult gradient_check(const VolterraLayerParams<double>& p, const Tensor<double>& x, double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw std::invalid_argument("gradient_check: eps must lie in (0, 1e-2]");
  validate(p);

  auto grads = zeros_like(p);
  const auto y = volterra_forward(x, p);
  Tensor<double> ones(y.shape(), 1.0);
  volterra_backward<double>(x, p, ones, nullptr, &grads, nullptr);

  auto loss = [&](const VolterraLayerParams<double>& q) {
    const auto out = volterra_forward(x, q);
    double s = 0.0;
    for (double v : out.vec()) s += v;
    return s;
  };

  GradCheckResult result;
  VolterraLayerParams<double> probe = p;
  std::vector<Tensor<double>*> probe_kernels;
  std::vector<const Tensor<double>*> grad_kernels;
  std::vector<std::string> names;
  probe.for_each_kernel([&](const std::string& n, Tensor<double>& t) {
    probe_kernels.push_back(&t);
    names.push_back(n);
  });
  grads.for_each_kernel([&](const std::string&, const Tensor<double>& t) { grad_kernels.push_back(&t); });

  for (std::size_t t = 0; t < probe_kernels.size(); ++t) {
    Tensor<double>& kernel = *probe_kernels[t];
    for (std::size_t i = 0; i < kernel.size(); ++i) {
      const std::string where = names[t] + "[" + std::to_string(i) + "]";
      const double analytic = (*grad_kernels[t])[i];
      if (!std::isfinite(analytic)) {
        result.ok = false;
        result.failure = "non-finite analytic gradient at " + where;
        return result;
      }
      const double saved = kernel[i];
      kernel[i] = saved + eps;
      const double up = loss(probe);
      kernel[i] = saved - eps;
      const double down = loss(probe);
      kernel[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      if (!std::isfinite(numeric)) {
        result.ok = false;
        result.failure = "non-finite numeric gradient at " + where;
        return result;
      }
      const double scale = std::max({std::abs(analytic), std::abs(numeric), 1.0});
      const double rel = std::abs(analytic - numeric) / scale;
      if (rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_parameter = where;
      }
    }
  }
  return result;
}

#define GALAXYEDIT_INSTANTIATE_VOLTERRA(T)                                                                     \
  template void validate<T>(const VolterraLayerParams<T>&);                                                   \
  template VolterraLayerParams<T> init_zero<T>(int, int, int, int);                                          \
  template VolterraLayerParams<T> init_zero_output<T>(int, int, int, int, std::mt19937_64&, T);              \
  template std::int64_t param_count<T>(const VolterraLayerParams<T>&);                                       \
  template VolterraLayerParams<T> zeros_like<T>(const VolterraLayerParams<T>&);                              \
  template Tensor<T> volterra_forward<T>(const Tensor<T>&, const VolterraLayerParams<T>&, VolterraCache<T>*); \
  template void volterra_backward<T>(const Tensor<T>&, const VolterraLayerParams<T>&, const Tensor<T>&,      \
                                     const VolterraCache<T>*, VolterraLayerParams<T>*, Tensor<T>*);

GALAXYEDIT_INSTANTIATE_VOLTERRA(float)
GALAXYEDIT_INSTANTIATE_VOLTERRA(double)

}  // namespace galaxyedit
