#pragma once

// Desk-scale pixel-space U-Net: 3 resolutions x 2 encoder blocks, a base-only
// decoder, and a narrower trainable control encoder with the same block layout.

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "galaxyedit/nn.hpp"

namespace galaxyedit {

inline constexpr int kLevels = 3;
inline constexpr int kBlocksPerLevel = 2;
inline constexpr int kEncoderBlocks = kLevels * kBlocksPerLevel;

struct UNetConfig {
  int image_channels = 3;
  std::array<int, kLevels> base_widths{16, 32, 32};
  std::array<int, kLevels> control_widths{16, 32, 32};
  int time_dim = 32;
  int emb_dim = 64;
  int text_dim = 64;
  int control_stride = 1;  // stride of each control-embedder conv

  /// Width of encoder block i (0-based) for the given per-level widths.
  static int block_width(const std::array<int, kLevels>& widths, int i) { return widths[i / kBlocksPerLevel]; }
  /// Encoder blocks that open a new level downsample by 2.
  static int block_stride(int i) { return (i > 0 && i % kBlocksPerLevel == 0) ? 2 : 1; }
};

/// conv -> + per-channel conditioning -> SiLU
template <typename T>
struct ConvBlock {
  Conv2d<T> conv;
  Linear<T> emb;

  struct Cache {
    Tensor<T> x;
    Tensor<T> h;
  };

  ConvBlock() = default;
  ConvBlock(int c_in, int c_out, int stride, int emb_dim, std::mt19937_64& rng)
      : conv(c_in, c_out, 3, stride, rng, 1.4), emb(emb_dim, c_out, rng, 0.5) {}

  int c_out() const { return conv.c_out(); }

  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& cond_act, Cache* cache) const;
  /// Accumulates into `dcond_act` when non-null (must be pre-shaped).
  Tensor<T> backward(const Cache& c, const Tensor<T>& cond_act, const Tensor<T>& dy, bool need_dx,
                     Tensor<T>* dcond_act);

  void set_trainable(bool on) {
    conv.trainable = on;
    emb.trainable = on;
  }
  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    conv.collect(prefix + ".conv", out);
    emb.collect(prefix + ".emb", out);
  }
};

/// Sinusoidal timestep features [B, dim, 1, 1].
template <typename T>
Tensor<T> timestep_features(const std::vector<int>& t, int dim);

template <typename T>
struct BaseUNet {
  UNetConfig cfg;
  Linear<T> time1, time2, text_proj;
  Conv2d<T> stem;
  std::array<ConvBlock<T>, kEncoderBlocks> enc;
  ConvBlock<T> mid, dec1, dec0;
  Conv2d<T> out;

  BaseUNet() = default;
  BaseUNet(const UNetConfig& cfg, std::uint64_t seed);

  void set_trainable(bool on);
  /// Every base array in a fixed order with names `base.{block}.{param}`.
  std::vector<ParamRef<T>> parameters();
};

template <typename T>
struct ControlStream {
  Conv2d<T> embed1, embed2;
  std::array<ConvBlock<T>, kEncoderBlocks> enc;

  ControlStream() = default;
  ControlStream(const UNetConfig& cfg, std::uint64_t seed);

  std::vector<ParamRef<T>> parameters();
};

}  // namespace galaxyedit
