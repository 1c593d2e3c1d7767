#include "galaxyedit/diffusion.hpp"

#include <spdlog/spdlog.h>

#include <cctype>
#include <cmath>
#include <stdexcept>

namespace galaxyedit {

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw ConfigError("noise schedule: T must be >= 1");
  NoiseSchedule s;
  s.steps = steps;
  s.betas.resize(steps);
  s.alphas_bar.resize(steps);
  double prod = 1.0;
  for (int i = 0; i < steps; ++i) {
    s.betas[i] = steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * i / (steps - 1);
    prod *= 1.0 - s.betas[i];
    s.alphas_bar[i] = prod;
  }
  s.validate();
  return s;
}

NoiseSchedule NoiseSchedule::make_default(int steps) {
  if (steps <= 20) throw ConfigError("noise schedule: default schedule needs more than 20 steps, got " + std::to_string(steps));
  const double scale = 1000.0 / steps;
  return linear(steps, 1e-4 * scale, 0.02 * scale);
}

void NoiseSchedule::validate() const {
  if (steps < 1 || static_cast<int>(betas.size()) != steps || static_cast<int>(alphas_bar.size()) != steps)
    throw ConfigError("noise schedule: inconsistent lengths");
  for (int i = 0; i < steps; ++i) {
    if (!(betas[i] > 0.0 && betas[i] < 1.0)) throw ConfigError("noise schedule: beta out of (0,1) at " + std::to_string(i));
    if (!(alphas_bar[i] > 0.0 && alphas_bar[i] < 1.0))
      throw ConfigError("noise schedule: alpha_bar out of (0,1) at " + std::to_string(i));
    if (i > 0 && !(alphas_bar[i] < alphas_bar[i - 1]))
      throw ConfigError("noise schedule: alpha_bar not strictly decreasing at " + std::to_string(i));
  }
}

template <typename T>
Tensor<T> add_noise(const Tensor<T>& z0, const Tensor<T>& eps, const std::vector<int>& t, const NoiseSchedule& sched) {
  require_same_shape(z0, eps, "add_noise");
  if (static_cast<int>(t.size()) != z0.n()) throw ShapeError("add_noise: need one timestep per sample");
  Tensor<T> zt(z0.shape());
  const std::size_t per = z0.size() / std::max(1, z0.n());
  for (int b = 0; b < z0.n(); ++b) {
    if (t[b] < 0 || t[b] >= sched.steps)
      throw std::out_of_range("add_noise: t=" + std::to_string(t[b]) + " outside [0, " + std::to_string(sched.steps) + ")");
    const double ab = sched.alphas_bar[t[b]];
    const T a = static_cast<T>(std::sqrt(ab)), s = static_cast<T>(std::sqrt(1.0 - ab));
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) zt[i] = a * z0[i] + s * eps[i];
  }
  return zt;
}

namespace {

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 14695981039346656037ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

// The two task verbs must never share a bucket.
static_assert(fnv1a("add") % TextEmbedder::kDefaultVocab != fnv1a("remove") % TextEmbedder::kDefaultVocab);

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

TextEmbedder::TextEmbedder(int vocab, int dim, std::uint64_t seed) : vocab_(vocab), dim_(dim) {
  if (vocab < 1 || dim < 1) throw ConfigError("text embedder: vocab and dim must be positive");
  table_.resize(static_cast<std::size_t>(vocab) * dim);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  for (auto& v : table_) v = static_cast<float>(d(rng));
}

std::size_t TextEmbedder::bucket(std::string_view token) const { return fnv1a(token) % static_cast<std::uint64_t>(vocab_); }

std::vector<float> TextEmbedder::embed(const std::string& instruction) const {
  std::vector<float> out(dim_, 0.0f);
  const auto tokens = tokenize(instruction);
  if (tokens.empty()) {
    spdlog::warn("embed_text: empty instruction, returning zero embedding");
    return out;
  }
  for (const auto& tok : tokens) {
    const float* row = table_.data() + bucket(tok) * dim_;
    for (int i = 0; i < dim_; ++i) out[i] += row[i];
  }
  for (auto& v : out) v /= static_cast<float>(tokens.size());
  return out;
}

template <typename T>
Tensor<T> TextEmbedder::embed_batch(const std::vector<std::string>& texts) const {
  Tensor<T> out(static_cast<int>(texts.size()), dim_, 1, 1);
  for (std::size_t b = 0; b < texts.size(); ++b) {
    const auto e = embed(texts[b]);
    for (int i = 0; i < dim_; ++i) out.at(static_cast<int>(b), i, 0, 0) = static_cast<T>(e[i]);
  }
  return out;
}

template <typename T>
void TrainBatch<T>::validate(const NoiseSchedule& sched) const {
  require_same_shape(z0, eps, "train batch z0/eps");
  if (!control.empty() && (control.n() != z0.n())) throw ShapeError("train batch: control batch size mismatch");
  if (text_cond.n() != z0.n()) throw ShapeError("train batch: text batch size mismatch");
  if (static_cast<int>(t.size()) != z0.n()) throw ShapeError("train batch: timestep count mismatch");
  for (int v : t)
    if (v < 0 || v >= sched.steps) throw std::out_of_range("train batch: timestep " + std::to_string(v));
}

template <typename T>
double diffusion_loss(const Tensor<T>& eps, const Tensor<T>& pred, Tensor<T>* d_pred) {
  require_same_shape(eps, pred, "diffusion_loss");
  const double inv_b = 1.0 / std::max(1, eps.n());
  double loss = 0.0;
  if (d_pred) *d_pred = Tensor<T>(eps.shape());
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const double diff = static_cast<double>(eps[i]) - static_cast<double>(pred[i]);
    loss += diff * diff;
    if (d_pred) (*d_pred)[i] = static_cast<T>(-2.0 * diff * inv_b);
  }
  return loss * inv_b;
}

namespace {

template <typename T>
void check_finite(double loss, const std::vector<ParamRef<T>>& params) {
  if (!std::isfinite(loss)) throw NumericError("training_step: non-finite loss " + std::to_string(loss));
  for (const auto& p : params)
    for (T g : p.grad)
      if (!std::isfinite(g)) throw NumericError("training_step: non-finite gradient in " + p.name);
}

}  // namespace

template <typename T>
double training_step(AdapterAssembly<T>& a, const TrainBatch<T>& batch, const NoiseSchedule& sched, Adam<T>& opt) {
  batch.validate(sched);
  auto params = trainable_parameters(a);
  zero_grads(params);
  const Tensor<T> zt = add_noise(batch.z0, batch.eps, batch.t, sched);
  JointTrace<T> trace;
  const Tensor<T> pred = forward_joint(a, zt, batch.t, batch.control, batch.text_cond, &trace);
  Tensor<T> d_pred;
  const double loss = diffusion_loss(batch.eps, pred, &d_pred);
  if (!std::isfinite(loss)) throw NumericError("training_step: non-finite loss " + std::to_string(loss));
  backward_joint(a.base, &a.control, &a.fusion_blocks, &a.fusion_grads, trace, d_pred);
  check_finite(loss, params);
  opt.step(params);
  return loss;
}

template <typename T>
double pretrain_step(BaseUNet<T>& base, const TrainBatch<T>& batch, const NoiseSchedule& sched, Adam<T>& opt) {
  batch.validate(sched);
  base.set_trainable(true);
  auto params = base.parameters();
  zero_grads(params);
  const Tensor<T> zt = add_noise(batch.z0, batch.eps, batch.t, sched);
  JointTrace<T> trace;
  const Tensor<T> pred = base_forward(base, zt, batch.t, batch.text_cond, &trace);
  Tensor<T> d_pred;
  const double loss = diffusion_loss(batch.eps, pred, &d_pred);
  if (!std::isfinite(loss)) throw NumericError("pretrain_step: non-finite loss " + std::to_string(loss));
  backward_joint<T>(base, nullptr, nullptr, nullptr, trace, d_pred);
  check_finite(loss, params);
  opt.step(params);
  return loss;
}

template <typename T>
Tensor<T> gaussian(Shape s, std::mt19937_64& rng) {
  Tensor<T> out(s);
  std::normal_distribution<double> d(0.0, 1.0);
  for (auto& v : out.vec()) v = static_cast<T>(d(rng));
  return out;
}

namespace {

std::vector<int> ddim_timesteps(int total, int steps) {
  if (steps < 1 || steps > total)
    throw std::invalid_argument("sample: steps must lie in [1, " + std::to_string(total) + "]");
  std::vector<int> ts(steps);
  for (int i = 0; i < steps; ++i)
    ts[i] = steps == 1 ? total - 1 : static_cast<int>(std::lround(static_cast<double>(i) * (total - 1) / (steps - 1)));
  return ts;
}

template <typename T, typename Predict>
Tensor<T> ddim(Shape shape, const NoiseSchedule& sched, int steps, std::uint64_t seed, Predict&& predict) {
  const auto ts = ddim_timesteps(sched.steps, steps);
  std::mt19937_64 rng(seed);
  Tensor<T> x = gaussian<T>(shape, rng);
  for (int i = steps - 1; i >= 0; --i) {
    const int t = ts[i];
    const double ab = sched.alphas_bar[t];
    const double ab_prev = i > 0 ? sched.alphas_bar[ts[i - 1]] : 1.0;
    const Tensor<T> eps = predict(x, std::vector<int>(shape.n, t));
    const double sa = std::sqrt(ab), sn = std::sqrt(1.0 - ab);
    const double sa_prev = std::sqrt(ab_prev), sn_prev = std::sqrt(1.0 - ab_prev);
    for (std::size_t j = 0; j < x.size(); ++j) {
      double x0 = (x[j] - sn * eps[j]) / sa;
      x0 = std::clamp(x0, -1.0, 1.0);
      const double e = (x[j] - sa * x0) / sn;
      x[j] = static_cast<T>(sa_prev * x0 + sn_prev * e);
    }
  }
  for (auto& v : x.vec()) v = std::clamp(v, T(-1), T(1));
  return x;
}

}  // namespace

template <typename T>
Tensor<T> sample(const AdapterAssembly<T>& a, const Tensor<T>& control, const Tensor<T>& text_cond,
                 const NoiseSchedule& sched, int steps, std::uint64_t seed) {
  const Shape shape{control.n(), a.unet.image_channels, control.h() / (a.unet.control_stride * a.unet.control_stride),
                    control.w() / (a.unet.control_stride * a.unet.control_stride)};
  return ddim<T>(shape, sched, steps, seed, [&](const Tensor<T>& x, const std::vector<int>& t) {
    return forward_joint(a, x, t, control, text_cond);
  });
}

template <typename T>
Tensor<T> sample_base(const BaseUNet<T>& base, const Tensor<T>& text_cond, int height, int width,
                      const NoiseSchedule& sched, int steps, std::uint64_t seed) {
  const Shape shape{text_cond.n(), base.cfg.image_channels, height, width};
  return ddim<T>(shape, sched, steps, seed,
                 [&](const Tensor<T>& x, const std::vector<int>& t) { return base_forward(base, x, t, text_cond); });
}

#define GALAXYEDIT_INSTANTIATE_DIFFUSION(T)                                                                       \
  template Tensor<T> add_noise<T>(const Tensor<T>&, const Tensor<T>&, const std::vector<int>&, const NoiseSchedule&); \
  template Tensor<T> TextEmbedder::embed_batch<T>(const std::vector<std::string>&) const;                       \
  template struct TrainBatch<T>;                                                                                 \
  template double diffusion_loss<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>*);                            \
  template double training_step<T>(AdapterAssembly<T>&, const TrainBatch<T>&, const NoiseSchedule&, Adam<T>&);   \
  template double pretrain_step<T>(BaseUNet<T>&, const TrainBatch<T>&, const NoiseSchedule&, Adam<T>&);          \
  template Tensor<T> sample<T>(const AdapterAssembly<T>&, const Tensor<T>&, const Tensor<T>&, const NoiseSchedule&, \
                               int, std::uint64_t);                                                              \
  template Tensor<T> sample_base<T>(const BaseUNet<T>&, const Tensor<T>&, int, int, const NoiseSchedule&, int,   \
                                    std::uint64_t);                                                              \
  template Tensor<T> gaussian<T>(Shape, std::mt19937_64&);

GALAXYEDIT_INSTANTIATE_DIFFUSION(float)
GALAXYEDIT_INSTANTIATE_DIFFUSION(double)

}  // namespace galaxyedit
