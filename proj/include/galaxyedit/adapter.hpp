#pragma once

// Bidirectional base <-> control exchange for a frozen base U-Net encoder.
//
// linear mode (zero convolutions):
//   x_b = F_b + Z_bc(F_c)            x_c = F_c + Z_cb(F_b)
// volterra mode (learnable per-block weight w, clamped to [0, 1]):
//   x_b = (1 - w) F_b + w V_bc([F_b, F_c])
//   x_c = (1 - w) F_c + w V_cb([F_c, F_b])
//
// At each exchange point both equations read the pre-fusion block outputs,
// and the control update is applied before the base update.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "galaxyedit/unet.hpp"
#include "galaxyedit/volterra.hpp"

namespace galaxyedit {

enum class FusionMode { linear, volterra };

std::string to_string(FusionMode m);
FusionMode parse_fusion_mode(const std::string& s);

template <typename T>
struct ZeroConvParams {
  Tensor<T> kernel;  // [C_out, C_in, 1, 1]

  static ZeroConvParams zeros(int c_in, int c_out) { return {Tensor<T>(c_out, c_in, 1, 1)}; }
};

template <typename T>
using Bridge = std::variant<VolterraLayerParams<T>, ZeroConvParams<T>>;

template <typename T>
struct FusionBlock {
  FusionMode mode = FusionMode::volterra;
  Bridge<T> bridge_bc;  // control -> base
  Bridge<T> bridge_cb;  // base -> control
  T fusion_weight_w = T(0);

  /// The weight actually applied: fusion_weight_w clamped to [0, 1].
  T effective_weight() const { return std::clamp(fusion_weight_w, T(0), T(1)); }

  /// Zero-initialized block for a base stream of `c_base` channels and a
  /// control stream of `c_control` channels. Volterra bridges take the
  /// concatenated streams; with `rng` the Wa factors get small random values
  /// (output stays exactly zero), otherwise every entry is zero.
  static FusionBlock make(FusionMode mode, int c_base, int c_control, int rank_q, int kernel,
                          std::mt19937_64* rng = nullptr, T factor_scale = T(0.1));
};

/// Same-structure gradient accumulators for a block (all zeros).
template <typename T>
FusionBlock<T> zero_grad_like(const FusionBlock<T>& blk);

template <typename T>
struct FusionCache {
  Tensor<T> concat;
  Tensor<T> bridge_out;
  VolterraCache<T> volterra;
};

template <typename T>
Tensor<T> fuse_into_base(const Tensor<T>& fb_out, const Tensor<T>& fc_out, const FusionBlock<T>& blk,
                         FusionCache<T>* cache = nullptr);
template <typename T>
Tensor<T> fuse_into_control(const Tensor<T>& fc_out, const Tensor<T>& fb_out, const FusionBlock<T>& blk,
                            FusionCache<T>* cache = nullptr);

/// Backward of fuse_into_base. Gradients for bridge_bc and the fusion weight
/// are accumulated into `grads`; d_fb/d_fc are accumulated (pre-shaped).
template <typename T>
void fuse_into_base_backward(const Tensor<T>& fb_out, const Tensor<T>& fc_out, const FusionBlock<T>& blk,
                             const FusionCache<T>& cache, const Tensor<T>& dout, FusionBlock<T>* grads,
                             Tensor<T>* d_fb, Tensor<T>* d_fc);
template <typename T>
void fuse_into_control_backward(const Tensor<T>& fc_out, const Tensor<T>& fb_out, const FusionBlock<T>& blk,
                                const FusionCache<T>& cache, const Tensor<T>& dout, FusionBlock<T>* grads,
                                Tensor<T>* d_fc, Tensor<T>* d_fb);

struct AdapterConfig {
  FusionMode mode = FusionMode::volterra;
  int rank_q = kDefaultVolterraRank;
  int bridge_kernel = 1;
  double factor_init_scale = 0.1;  // Wa_q init stddev; 0 gives all-zero bridges
  std::uint64_t seed = 0;
};

template <typename T>
struct AdapterAssembly {
  UNetConfig unet;
  AdapterConfig adapter;
  BaseUNet<T> base;
  ControlStream<T> control;
  std::vector<FusionBlock<T>> fusion_blocks;
  std::vector<FusionBlock<T>> fusion_grads;

  /// Wraps a (pretrained) base; the base is frozen from here on.
  static AdapterAssembly build(BaseUNet<T> base, const AdapterConfig& cfg);

  /// Throws ShapeError if the block structure of the streams is inconsistent.
  void validate() const;
};

/// Full intermediate state of one forward pass, needed by backward.
template <typename T>
struct JointTrace {
  std::vector<int> t;
  Tensor<T> t_feat, t_h1, t_a1, text, cond_act, cond;
  Tensor<T> z, x0;
  std::array<typename ConvBlock<T>::Cache, kEncoderBlocks> base_cache;
  std::array<Tensor<T>, kEncoderBlocks> fb, xb;

  bool has_control = false;
  Tensor<T> control, ce1_h, ce1_a, xc0;
  std::array<typename ConvBlock<T>::Cache, kEncoderBlocks> ctrl_cache;
  std::array<Tensor<T>, kEncoderBlocks> fc, xc;
  std::array<FusionCache<T>, kEncoderBlocks> fuse_b, fuse_c;

  typename ConvBlock<T>::Cache mid, dec1, dec0;
  Tensor<T> mid_out, dec1_out, dec0_out;
};

/// Base-only noise prediction (no control stream, no exchange).
template <typename T>
Tensor<T> base_forward(const BaseUNet<T>& base, const Tensor<T>& z_t, const std::vector<int>& t,
                       const Tensor<T>& text_cond, JointTrace<T>* trace = nullptr);

/// Joint base/control noise prediction.
template <typename T>
Tensor<T> forward_joint(const AdapterAssembly<T>& asm_, const Tensor<T>& z_t, const std::vector<int>& t,
                        const Tensor<T>& control, const Tensor<T>& text_cond, JointTrace<T>* trace = nullptr);

/// Backpropagates d(loss)/d(eps_pred). Accumulates into the control, bridge
/// and fusion-weight gradients; base parameter gradients are accumulated only
/// if the base is trainable (pretraining). Returns d(loss)/d(z_t) when
/// `need_dz`.
template <typename T>
Tensor<T> backward_joint(BaseUNet<T>& base, ControlStream<T>* control, std::vector<FusionBlock<T>>* fusion,
                         std::vector<FusionBlock<T>>* fusion_grads, const JointTrace<T>& trace,
                         const Tensor<T>& d_eps, bool need_dz = false);

/// Control stream, bridge and fusion-weight arrays; never base arrays.
template <typename T>
std::vector<ParamRef<T>> trainable_parameters(AdapterAssembly<T>& asm_);

/// Number of scalars in trainable_parameters().
template <typename T>
std::int64_t count_parameters(const std::vector<ParamRef<T>>& params) {
  std::int64_t n = 0;
  for (const auto& p : params) n += static_cast<std::int64_t>(p.value.size());
  return n;
}

/// SHA-256 (hex) over names and raw bytes of every base array.
template <typename T>
std::string base_parameter_hash(BaseUNet<T>& base);

}  // namespace galaxyedit
