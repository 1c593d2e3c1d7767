#include "galaxyedit/unet.hpp"

#include <cmath>

namespace galaxyedit {

template <typename T>
Tensor<T> ConvBlock<T>::forward(const Tensor<T>& x, const Tensor<T>& cond_act, Cache* cache) const {
  Tensor<T> h = conv.forward(x);
  add_channel_bias(h, emb.forward(cond_act));
  Tensor<T> y = silu(h);
  if (cache) {
    cache->x = x;
    cache->h = std::move(h);
  }
  return y;
}

template <typename T>
Tensor<T> ConvBlock<T>::backward(const Cache& c, const Tensor<T>& cond_act, const Tensor<T>& dy, bool need_dx,
                                 Tensor<T>* dcond_act) {
  const Tensor<T> dh = silu_backward(c.h, dy);
  if (emb.trainable || dcond_act) {
    const Tensor<T> de = channel_sums(dh);
    Tensor<T> dca = emb.backward(cond_act, de, dcond_act != nullptr);
    if (dcond_act) add_inplace(*dcond_act, dca);
  }
  return conv.backward(c.x, dh, need_dx);
}

template <typename T>
Tensor<T> timestep_features(const std::vector<int>& t, int dim) {
  const int half = dim / 2;
  Tensor<T> out(static_cast<int>(t.size()), dim, 1, 1);
  for (std::size_t b = 0; b < t.size(); ++b) {
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / half);
      const double arg = t[b] * freq;
      out.at(static_cast<int>(b), i, 0, 0) = static_cast<T>(std::sin(arg));
      out.at(static_cast<int>(b), half + i, 0, 0) = static_cast<T>(std::cos(arg));
    }
  }
  return out;
}

template <typename T>
BaseUNet<T>::BaseUNet(const UNetConfig& c, std::uint64_t seed) : cfg(c) {
  std::mt19937_64 rng(seed);
  const auto& w = cfg.base_widths;
  time1 = Linear<T>(cfg.time_dim, cfg.emb_dim, rng);
  time2 = Linear<T>(cfg.emb_dim, cfg.emb_dim, rng);
  text_proj = Linear<T>(cfg.text_dim, cfg.emb_dim, rng);
  stem = Conv2d<T>(cfg.image_channels, w[0], 3, 1, rng);
  int c_in = w[0];
  for (int i = 0; i < kEncoderBlocks; ++i) {
    const int c_out = UNetConfig::block_width(w, i);
    enc[i] = ConvBlock<T>(c_in, c_out, UNetConfig::block_stride(i), cfg.emb_dim, rng);
    c_in = c_out;
  }
  mid = ConvBlock<T>(w[2], w[2], 1, cfg.emb_dim, rng);
  dec1 = ConvBlock<T>(w[2] + w[1], w[1], 1, cfg.emb_dim, rng);
  dec0 = ConvBlock<T>(w[1] + w[0], w[0], 1, cfg.emb_dim, rng);
  out = Conv2d<T>(w[0], cfg.image_channels, 3, 1, rng, 0.2);
}

template <typename T>
void BaseUNet<T>::set_trainable(bool on) {
  for (Conv2d<T>* c : {static_cast<Conv2d<T>*>(&time1), static_cast<Conv2d<T>*>(&time2),
                       static_cast<Conv2d<T>*>(&text_proj), &stem, &out})
    c->trainable = on;
  for (auto& b : enc) b.set_trainable(on);
  mid.set_trainable(on);
  dec1.set_trainable(on);
  dec0.set_trainable(on);
}

template <typename T>
std::vector<ParamRef<T>> BaseUNet<T>::parameters() {
  std::vector<ParamRef<T>> out_refs;
  time1.collect("base.time.lin1", out_refs);
  time2.collect("base.time.lin2", out_refs);
  text_proj.collect("base.text.proj", out_refs);
  stem.collect("base.stem", out_refs);
  for (int i = 0; i < kEncoderBlocks; ++i) enc[i].collect("base." + std::to_string(i), out_refs);
  mid.collect("base.mid", out_refs);
  dec1.collect("base.dec1", out_refs);
  dec0.collect("base.dec0", out_refs);
  out.collect("base.out", out_refs);
  return out_refs;
}

template <typename T>
ControlStream<T>::ControlStream(const UNetConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto& w = cfg.control_widths;
  embed1 = Conv2d<T>(cfg.image_channels, w[0], 3, cfg.control_stride, rng);
  embed2 = Conv2d<T>(w[0], w[0], 3, cfg.control_stride, rng);
  int c_in = w[0];
  for (int i = 0; i < kEncoderBlocks; ++i) {
    const int c_out = UNetConfig::block_width(w, i);
    enc[i] = ConvBlock<T>(c_in, c_out, UNetConfig::block_stride(i), cfg.emb_dim, rng);
    c_in = c_out;
  }
}

template <typename T>
std::vector<ParamRef<T>> ControlStream<T>::parameters() {
  std::vector<ParamRef<T>> out;
  embed1.collect("control.embed.1", out);
  embed2.collect("control.embed.2", out);
  for (int i = 0; i < kEncoderBlocks; ++i) enc[i].collect("control." + std::to_string(i), out);
  return out;
}

template struct ConvBlock<float>;
template struct ConvBlock<double>;
template Tensor<float> timestep_features<float>(const std::vector<int>&, int);
template Tensor<double> timestep_features<double>(const std::vector<int>&, int);
template struct BaseUNet<float>;
template struct BaseUNet<double>;
template struct ControlStream<float>;
template struct ControlStream<double>;

}  // namespace galaxyedit
