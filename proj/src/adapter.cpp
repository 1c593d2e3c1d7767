#include "galaxyedit/adapter.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <memory>

namespace galaxyedit {

std::string to_string(FusionMode m) { return m == FusionMode::linear ? "linear" : "volterra"; }

FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "linear") return FusionMode::linear;
  if (s == "volterra") return FusionMode::volterra;
  throw ConfigError("unknown fusion mode '" + s + "' (expected linear|volterra)");
}

template <typename T>
FusionBlock<T> FusionBlock<T>::make(FusionMode mode, int c_base, int c_control, int rank_q, int kernel,
                                    std::mt19937_64* rng, T factor_scale) {
  FusionBlock blk;
  blk.mode = mode;
  blk.fusion_weight_w = T(0);
  if (mode == FusionMode::linear) {
    blk.bridge_bc = ZeroConvParams<T>::zeros(c_control, c_base);
    blk.bridge_cb = ZeroConvParams<T>::zeros(c_base, c_control);
    return blk;
  }
  const int c_cat = c_base + c_control;
  if (rng && factor_scale > T(0)) {
    blk.bridge_bc = init_zero_output<T>(c_cat, c_base, kernel, rank_q, *rng, factor_scale);
    blk.bridge_cb = init_zero_output<T>(c_cat, c_control, kernel, rank_q, *rng, factor_scale);
  } else {
    blk.bridge_bc = init_zero<T>(c_cat, c_base, kernel, rank_q);
    blk.bridge_cb = init_zero<T>(c_cat, c_control, kernel, rank_q);
  }
  return blk;
}

template <typename T>
FusionBlock<T> zero_grad_like(const FusionBlock<T>& blk) {
  FusionBlock<T> g = blk;
  g.fusion_weight_w = T(0);
  for (Bridge<T>* b : {&g.bridge_bc, &g.bridge_cb}) {
    if (auto* v = std::get_if<VolterraLayerParams<T>>(b)) *v = zeros_like(*v);
    else std::get<ZeroConvParams<T>>(*b).kernel.fill(T(0));
  }
  return g;
}

namespace {

template <typename T>
void accumulate(Tensor<T>* dst, const Tensor<T>& src) {
  if (!dst) return;
  if (dst->empty()) *dst = Tensor<T>(src.shape());
  add_inplace(*dst, src);
}

template <typename T>
void accumulate_scaled(Tensor<T>* dst, T s, const Tensor<T>& src) {
  if (!dst) return;
  if (dst->empty()) *dst = Tensor<T>(src.shape());
  axpy_inplace(*dst, s, src);
}

// Shared implementation of both fusion directions. `primary` is the stream
// being updated and `other` the stream it receives from.
template <typename T>
Tensor<T> fuse(const Tensor<T>& primary, const Tensor<T>& other, const FusionBlock<T>& blk, const Bridge<T>& bridge,
               FusionCache<T>* cache, const char* who) {
  if (primary.n() != other.n() || primary.h() != other.h() || primary.w() != other.w())
    throw ShapeError(std::string(who) + ": streams not spatially aligned " + primary.shape().str() + " vs " +
                     other.shape().str());

  if (blk.mode == FusionMode::linear) {
    const auto* z = std::get_if<ZeroConvParams<T>>(&bridge);
    if (!z) throw ShapeError(std::string(who) + ": linear mode requires a zero-conv bridge");
    if (z->kernel.c() != other.c())
      throw ShapeError(std::string(who) + ": bridge expects C_in=" + std::to_string(z->kernel.c()) +
                       " but source stream has C=" + std::to_string(other.c()));
    if (z->kernel.n() != primary.c())
      throw ShapeError(std::string(who) + ": bridge produces C_out=" + std::to_string(z->kernel.n()) +
                       " but destination stream has C=" + std::to_string(primary.c()));
    Tensor<T> out = conv2d(other, z->kernel, Tensor<T>{}, ConvGeometry{});
    add_inplace(out, primary);
    return out;
  }

  const auto* v = std::get_if<VolterraLayerParams<T>>(&bridge);
  if (!v) throw ShapeError(std::string(who) + ": volterra mode requires a Volterra bridge");
  if (v->c_in() != primary.c() + other.c())
    throw ShapeError(std::string(who) + ": bridge expects C_in=" + std::to_string(v->c_in()) +
                     " but concatenated streams have C=" + std::to_string(primary.c() + other.c()));
  if (v->c_out() != primary.c())
    throw ShapeError(std::string(who) + ": bridge produces C_out=" + std::to_string(v->c_out()) +
                     " but destination stream has C=" + std::to_string(primary.c()));

  const T w = blk.effective_weight();
  if (!cache && w == T(0)) return primary;

  Tensor<T> cat = concat_channels(primary, other);
  Tensor<T> vout = volterra_forward(cat, *v, cache ? &cache->volterra : nullptr);
  if (vout.shape() != primary.shape())
    throw ShapeError(std::string(who) + ": bridge output " + vout.shape().str() + " does not match stream " +
                     primary.shape().str());
  Tensor<T> out(primary.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (T(1) - w) * primary[i] + w * vout[i];
  if (cache) {
    cache->concat = std::move(cat);
    cache->bridge_out = std::move(vout);
  }
  return out;
}

template <typename T>
void fuse_backward(const Tensor<T>& primary, const Tensor<T>& other, const FusionBlock<T>& blk,
                   const Bridge<T>& bridge, const FusionCache<T>& cache, const Tensor<T>& dout, Bridge<T>* gbridge,
                   T* gw, Tensor<T>* d_primary, Tensor<T>* d_other) {
  if (blk.mode == FusionMode::linear) {
    const auto& z = std::get<ZeroConvParams<T>>(bridge);
    accumulate(d_primary, dout);
    Tensor<T> d_o;
    Tensor<T>* dk = gbridge ? &std::get<ZeroConvParams<T>>(*gbridge).kernel : nullptr;
    conv2d_backward<T>(other, z.kernel, dout, ConvGeometry{}, d_other ? &d_o : nullptr, dk, nullptr);
    if (d_other) accumulate(d_other, d_o);
    return;
  }

  const auto& v = std::get<VolterraLayerParams<T>>(bridge);
  const T w = blk.effective_weight();
  accumulate_scaled(d_primary, T(1) - w, dout);
  if (gw) {
    T s = 0;
    for (std::size_t i = 0; i < dout.size(); ++i) s += dout[i] * (cache.bridge_out[i] - primary[i]);
    *gw += s;
  }
  if (w == T(0)) return;  // bridge receives exactly zero signal

  const Tensor<T> dv = scaled(dout, w);
  Tensor<T> dcat;
  auto* gv = gbridge ? &std::get<VolterraLayerParams<T>>(*gbridge) : nullptr;
  volterra_backward(cache.concat, v, dv, &cache.volterra, gv, (d_primary || d_other) ? &dcat : nullptr);
  if (d_primary || d_other) {
    auto [dp, d_o] = split_channels(dcat, primary.c());
    accumulate(d_primary, dp);
    accumulate(d_other, d_o);
  }
}

}  // namespace

template <typename T>
Tensor<T> fuse_into_base(const Tensor<T>& fb_out, const Tensor<T>& fc_out, const FusionBlock<T>& blk,
                         FusionCache<T>* cache) {
  return fuse(fb_out, fc_out, blk, blk.bridge_bc, cache, "fuse_into_base");
}

template <typename T>
Tensor<T> fuse_into_control(const Tensor<T>& fc_out, const Tensor<T>& fb_out, const FusionBlock<T>& blk,
                            FusionCache<T>* cache) {
  return fuse(fc_out, fb_out, blk, blk.bridge_cb, cache, "fuse_into_control");
}

template <typename T>
void fuse_into_base_backward(const Tensor<T>& fb_out, const Tensor<T>& fc_out, const FusionBlock<T>& blk,
                             const FusionCache<T>& cache, const Tensor<T>& dout, FusionBlock<T>* grads,
                             Tensor<T>* d_fb, Tensor<T>* d_fc) {
  fuse_backward(fb_out, fc_out, blk, blk.bridge_bc, cache, dout, grads ? &grads->bridge_bc : nullptr,
                grads ? &grads->fusion_weight_w : nullptr, d_fb, d_fc);
}

template <typename T>
void fuse_into_control_backward(const Tensor<T>& fc_out, const Tensor<T>& fb_out, const FusionBlock<T>& blk,
                                const FusionCache<T>& cache, const Tensor<T>& dout, FusionBlock<T>* grads,
                                Tensor<T>* d_fc, Tensor<T>* d_fb) {
  fuse_backward(fc_out, fb_out, blk, blk.bridge_cb, cache, dout, grads ? &grads->bridge_cb : nullptr,
                grads ? &grads->fusion_weight_w : nullptr, d_fc, d_fb);
}

template <typename T>
AdapterAssembly<T> AdapterAssembly<T>::build(BaseUNet<T> base, const AdapterConfig& cfg) {
  if (cfg.rank_q < 1) throw ConfigError("adapter: rank_q must be >= 1");
  if (cfg.bridge_kernel < 1 || cfg.bridge_kernel % 2 == 0) throw ConfigError("adapter: bridge_kernel must be odd");
  AdapterAssembly a;
  a.unet = base.cfg;
  a.adapter = cfg;
  a.base = std::move(base);
  a.base.set_trainable(false);
  a.control = ControlStream<T>(a.unet, cfg.seed * 7919 + 17);
  std::mt19937_64 rng(cfg.seed * 104729 + 3);
  for (int i = 0; i < kEncoderBlocks; ++i) {
    const int cb = UNetConfig::block_width(a.unet.base_widths, i);
    const int cc = UNetConfig::block_width(a.unet.control_widths, i);
    a.fusion_blocks.push_back(FusionBlock<T>::make(cfg.mode, cb, cc, cfg.rank_q, cfg.bridge_kernel,
                                                   cfg.factor_init_scale > 0 ? &rng : nullptr,
                                                   static_cast<T>(cfg.factor_init_scale)));
    a.fusion_grads.push_back(zero_grad_like(a.fusion_blocks.back()));
  }
  a.validate();
  return a;
}

template <typename T>
void AdapterAssembly<T>::validate() const {
  if (static_cast<int>(fusion_blocks.size()) != kEncoderBlocks)
    throw ShapeError("adapter: expected " + std::to_string(kEncoderBlocks) + " fusion blocks (one per encoder block), got " +
                     std::to_string(fusion_blocks.size()));
  if (fusion_grads.size() != fusion_blocks.size()) throw ShapeError("adapter: gradient/fusion block count mismatch");
  for (int i = 0; i < kEncoderBlocks; ++i) {
    const int cb = base.enc[i].c_out();
    const int cc = control.enc[i].c_out();
    const auto& blk = fusion_blocks[i];
    auto check = [&](const Bridge<T>& br, int c_in_expected, int c_out_expected, const char* which) {
      int c_in, c_out;
      if (const auto* v = std::get_if<VolterraLayerParams<T>>(&br)) {
        if (blk.mode != FusionMode::volterra) throw ShapeError("adapter: block " + std::to_string(i) + " mode/bridge mismatch");
        galaxyedit::validate(*v);
        c_in = v->c_in();
        c_out = v->c_out();
      } else {
        if (blk.mode != FusionMode::linear) throw ShapeError("adapter: block " + std::to_string(i) + " mode/bridge mismatch");
        const auto& z = std::get<ZeroConvParams<T>>(br);
        c_in = z.kernel.c();
        c_out = z.kernel.n();
      }
      if (c_in != c_in_expected || c_out != c_out_expected)
        throw ShapeError("adapter: block " + std::to_string(i) + " " + which + " is " + std::to_string(c_in) + "->" +
                         std::to_string(c_out) + ", expected " + std::to_string(c_in_expected) + "->" +
                         std::to_string(c_out_expected));
    };
    const bool vol = blk.mode == FusionMode::volterra;
    check(blk.bridge_bc, vol ? cb + cc : cc, cb, "bridge_bc");
    check(blk.bridge_cb, vol ? cb + cc : cb, cc, "bridge_cb");
  }
}

namespace {

template <typename T>
Tensor<T> run(const BaseUNet<T>& base, const ControlStream<T>* control, const std::vector<FusionBlock<T>>* fusion,
              const Tensor<T>& z, const std::vector<int>& t, const Tensor<T>* control_img, const Tensor<T>& text,
              JointTrace<T>& tr) {
  const auto& cfg = base.cfg;
  if (z.c() != cfg.image_channels) throw ShapeError("forward: z_t has C=" + std::to_string(z.c()));
  if (static_cast<int>(t.size()) != z.n())
    throw ShapeError("forward: " + std::to_string(t.size()) + " timesteps for batch of " + std::to_string(z.n()));
  if (text.n() != z.n() || text.c() != cfg.text_dim || text.h() != 1 || text.w() != 1)
    throw ShapeError("forward: text conditioning must be [B, " + std::to_string(cfg.text_dim) + ", 1, 1], got " +
                     text.shape().str());
  const int down = 1 << (kLevels - 1);
  if (z.h() % down != 0 || z.w() % down != 0)
    throw ShapeError("forward: spatial size must be divisible by " + std::to_string(down));

  tr.t = t;
  tr.t_feat = timestep_features<T>(t, cfg.time_dim);
  tr.t_h1 = base.time1.forward(tr.t_feat);
  tr.t_a1 = silu(tr.t_h1);
  tr.cond = base.time2.forward(tr.t_a1);
  tr.text = text;
  add_inplace(tr.cond, base.text_proj.forward(text));
  tr.cond_act = silu(tr.cond);

  tr.z = z;
  tr.x0 = base.stem.forward(z);

  tr.has_control = control != nullptr;
  Tensor<T> xc_prev;
  if (control) {
    if (!control_img) throw ShapeError("forward_joint: missing control input");
    if (control_img->n() != z.n() || control_img->c() != cfg.image_channels)
      throw ShapeError("forward_joint: control must be [B, " + std::to_string(cfg.image_channels) + ", H, W], got " +
                       control_img->shape().str());
    tr.control = *control_img;
    tr.ce1_h = control->embed1.forward(*control_img);
    tr.ce1_a = silu(tr.ce1_h);
    tr.xc0 = control->embed2.forward(tr.ce1_a);
    if (tr.xc0.h() != tr.x0.h() || tr.xc0.w() != tr.x0.w())
      throw ShapeError("forward_joint: embedded control is " + std::to_string(tr.xc0.h()) + "x" +
                       std::to_string(tr.xc0.w()) + " but base input is " + std::to_string(tr.x0.h()) + "x" +
                       std::to_string(tr.x0.w()));
    xc_prev = tr.xc0;
  }

  const Tensor<T>* xb_prev = &tr.x0;
  for (int i = 0; i < kEncoderBlocks; ++i) {
    tr.fb[i] = base.enc[i].forward(*xb_prev, tr.cond_act, &tr.base_cache[i]);
    if (control) {
      tr.fc[i] = control->enc[i].forward(xc_prev, tr.cond_act, &tr.ctrl_cache[i]);
      const auto& blk = (*fusion)[i];
      tr.xc[i] = fuse_into_control(tr.fc[i], tr.fb[i], blk, &tr.fuse_c[i]);
      tr.xb[i] = fuse_into_base(tr.fb[i], tr.fc[i], blk, &tr.fuse_b[i]);
      xc_prev = tr.xc[i];
    } else {
      tr.xb[i] = tr.fb[i];
    }
    xb_prev = &tr.xb[i];
  }

  tr.mid_out = base.mid.forward(tr.xb[5], tr.cond_act, &tr.mid);
  tr.dec1_out = base.dec1.forward(concat_channels(upsample2x(tr.mid_out), tr.xb[3]), tr.cond_act, &tr.dec1);
  tr.dec0_out = base.dec0.forward(concat_channels(upsample2x(tr.dec1_out), tr.xb[1]), tr.cond_act, &tr.dec0);
  return base.out.forward(tr.dec0_out);
}

}  // namespace

template <typename T>
Tensor<T> base_forward(const BaseUNet<T>& base, const Tensor<T>& z_t, const std::vector<int>& t,
                       const Tensor<T>& text_cond, JointTrace<T>* trace) {
  JointTrace<T> local;
  return run<T>(base, nullptr, nullptr, z_t, t, nullptr, text_cond, trace ? *trace : local);
}

template <typename T>
Tensor<T> forward_joint(const AdapterAssembly<T>& a, const Tensor<T>& z_t, const std::vector<int>& t,
                        const Tensor<T>& control, const Tensor<T>& text_cond, JointTrace<T>* trace) {
  JointTrace<T> local;
  return run<T>(a.base, &a.control, &a.fusion_blocks, z_t, t, &control, text_cond, trace ? *trace : local);
}

template <typename T>
Tensor<T> backward_joint(BaseUNet<T>& base, ControlStream<T>* control, std::vector<FusionBlock<T>>* fusion,
                         std::vector<FusionBlock<T>>* fusion_grads, const JointTrace<T>& tr, const Tensor<T>& d_eps,
                         bool need_dz) {
  const bool base_trainable = base.stem.trainable;
  Tensor<T> dca_storage;
  Tensor<T>* dca = nullptr;
  if (base_trainable) {
    dca_storage = Tensor<T>(tr.cond_act.shape());
    dca = &dca_storage;
  }
  const auto& cfg = base.cfg;
  const int c1 = cfg.base_widths[1], c2 = cfg.base_widths[2];

  Tensor<T> d_dec0 = base.out.backward(tr.dec0_out, d_eps, true);
  Tensor<T> d_u0 = base.dec0.backward(tr.dec0, tr.cond_act, d_dec0, true, dca);
  auto [d_up1, d_skip1] = split_channels(d_u0, c1);
  Tensor<T> d_dec1_out = upsample2x_backward(d_up1);
  Tensor<T> d_u1 = base.dec1.backward(tr.dec1, tr.cond_act, d_dec1_out, true, dca);
  auto [d_upm, d_skip3] = split_channels(d_u1, c2);
  Tensor<T> d_mid_out = upsample2x_backward(d_upm);

  std::array<Tensor<T>, kEncoderBlocks> dxb, dxc;
  dxb[5] = base.mid.backward(tr.mid, tr.cond_act, d_mid_out, true, dca);
  accumulate(&dxb[3], d_skip3);
  accumulate(&dxb[1], d_skip1);

  const bool has_control = tr.has_control && control;
  Tensor<T> d_x0, d_xc0;
  for (int i = kEncoderBlocks - 1; i >= 0; --i) {
    Tensor<T> d_fb, d_fc;
    if (has_control) {
      const auto& blk = (*fusion)[i];
      auto* g = fusion_grads ? &(*fusion_grads)[i] : nullptr;
      if (!dxb[i].empty()) fuse_into_base_backward(tr.fb[i], tr.fc[i], blk, tr.fuse_b[i], dxb[i], g, &d_fb, &d_fc);
      if (!dxc[i].empty()) fuse_into_control_backward(tr.fc[i], tr.fb[i], blk, tr.fuse_c[i], dxc[i], g, &d_fc, &d_fb);
    } else {
      d_fb = dxb[i];
    }

    if (!d_fb.empty()) {
      const bool need_dx = i > 0 || base_trainable || need_dz;
      Tensor<T> d_prev = base.enc[i].backward(tr.base_cache[i], tr.cond_act, d_fb, need_dx, dca);
      if (need_dx) accumulate(i > 0 ? &dxb[i - 1] : &d_x0, d_prev);
    }
    if (has_control && !d_fc.empty()) {
      Tensor<T> d_prev = control->enc[i].backward(tr.ctrl_cache[i], tr.cond_act, d_fc, true, dca);
      accumulate(i > 0 ? &dxc[i - 1] : &d_xc0, d_prev);
    }
  }

  if (has_control && !d_xc0.empty()) {
    Tensor<T> d_a = control->embed2.backward(tr.ce1_a, d_xc0, true);
    control->embed1.backward(tr.control, silu_backward(tr.ce1_h, d_a), false);
  }

  Tensor<T> dz;
  if ((base_trainable || need_dz) && !d_x0.empty()) dz = base.stem.backward(tr.z, d_x0, need_dz);

  if (dca) {
    const Tensor<T> d_cond = silu_backward(tr.cond, *dca);
    base.text_proj.backward(tr.text, d_cond, false);
    const Tensor<T> d_a1 = base.time2.backward(tr.t_a1, d_cond, true);
    base.time1.backward(tr.t_feat, silu_backward(tr.t_h1, d_a1), false);
  }
  return dz;
}

template <typename T>
std::vector<ParamRef<T>> trainable_parameters(AdapterAssembly<T>& a) {
  std::vector<ParamRef<T>> out = a.control.parameters();
  for (int i = 0; i < kEncoderBlocks; ++i) {
    auto& blk = a.fusion_blocks[i];
    auto& g = a.fusion_grads[i];
    auto add_bridge = [&](const std::string& prefix, Bridge<T>& b, Bridge<T>& gb) {
      if (auto* v = std::get_if<VolterraLayerParams<T>>(&b)) {
        auto& gv = std::get<VolterraLayerParams<T>>(gb);
        std::vector<std::pair<std::string, Tensor<T>*>> vals;
        std::vector<Tensor<T>*> grads;
        v->for_each_kernel([&](const std::string& n, Tensor<T>& t) { vals.emplace_back(n, &t); });
        gv.for_each_kernel([&](const std::string&, Tensor<T>& t) { grads.push_back(&t); });
        for (std::size_t k = 0; k < vals.size(); ++k)
          out.push_back({prefix + "." + vals[k].first, vals[k].second->span(), grads[k]->span(), false});
      } else {
        out.push_back({prefix + ".kernel", std::get<ZeroConvParams<T>>(b).kernel.span(),
                       std::get<ZeroConvParams<T>>(gb).kernel.span(), false});
      }
    };
    const std::string idx = std::to_string(i);
    add_bridge("bridge_bc." + idx, blk.bridge_bc, g.bridge_bc);
    add_bridge("bridge_cb." + idx, blk.bridge_cb, g.bridge_cb);
    if (blk.mode == FusionMode::volterra)
      out.push_back({"fusion." + idx + ".w", std::span<T>(&blk.fusion_weight_w, 1), std::span<T>(&g.fusion_weight_w, 1),
                     true});
  }
  return out;
}

template <typename T>
std::string base_parameter_hash(BaseUNet<T>& base) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  for (const auto& p : base.parameters()) {
    EVP_DigestUpdate(ctx.get(), p.name.data(), p.name.size());
    EVP_DigestUpdate(ctx.get(), p.value.data(), p.value.size_bytes());
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

#define GALAXYEDIT_INSTANTIATE_ADAPTER(T)                                                                          \
  template struct FusionBlock<T>;                                                                                 \
  template FusionBlock<T> zero_grad_like<T>(const FusionBlock<T>&);                                              \
  template Tensor<T> fuse_into_base<T>(const Tensor<T>&, const Tensor<T>&, const FusionBlock<T>&, FusionCache<T>*); \
  template Tensor<T> fuse_into_control<T>(const Tensor<T>&, const Tensor<T>&, const FusionBlock<T>&,              \
                                          FusionCache<T>*);                                                       \
  template void fuse_into_base_backward<T>(const Tensor<T>&, const Tensor<T>&, const FusionBlock<T>&,             \
                                           const FusionCache<T>&, const Tensor<T>&, FusionBlock<T>*, Tensor<T>*,  \
                                           Tensor<T>*);                                                           \
  template void fuse_into_control_backward<T>(const Tensor<T>&, const Tensor<T>&, const FusionBlock<T>&,          \
                                              const FusionCache<T>&, const Tensor<T>&, FusionBlock<T>*,           \
                                              Tensor<T>*, Tensor<T>*);                                            \
  template struct AdapterAssembly<T>;                                                                             \
  template Tensor<T> base_forward<T>(const BaseUNet<T>&, const Tensor<T>&, const std::vector<int>&,             \
                                     const Tensor<T>&, JointTrace<T>*);                                           \
  template Tensor<T> forward_joint<T>(const AdapterAssembly<T>&, const Tensor<T>&, const std::vector<int>&,      \
                                      const Tensor<T>&, const Tensor<T>&, JointTrace<T>*);                        \
  template Tensor<T> backward_joint<T>(BaseUNet<T>&, ControlStream<T>*, std::vector<FusionBlock<T>>*,            \
                                       std::vector<FusionBlock<T>>*, const JointTrace<T>&, const Tensor<T>&, bool); \
  template std::vector<ParamRef<T>> trainable_parameters<T>(AdapterAssembly<T>&);                                \
  template std::string base_parameter_hash<T>(BaseUNet<T>&);

GALAXYEDIT_INSTANTIATE_ADAPTER(float)
GALAXYEDIT_INSTANTIATE_ADAPTER(double)

}  // namespace galaxyedit
