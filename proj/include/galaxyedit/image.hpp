#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "galaxyedit/tensor.hpp"

namespace galaxyedit {

/// Pixel box with exclusive upper corner: [x0, x1) x [y0, y1).
struct BBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  std::int64_t area() const { return static_cast<std::int64_t>(width()) * height(); }
  bool valid_in(int w, int h) const { return 0 <= x0 && x0 < x1 && x1 <= w && 0 <= y0 && y0 < y1 && y1 <= h; }
  double center_x() const { return 0.5 * (x0 + x1); }
  double center_y() const { return 0.5 * (y0 + y1); }
  bool operator==(const BBox&) const = default;
};

BBox clamp_bbox(const BBox& b, int w, int h);
BBox bbox_union(const BBox& a, const BBox& b);
double bbox_iou(const BBox& a, const BBox& b);

/// 8-bit interleaved image, 1 (gray) or 3 (RGB) channels.
struct Image {
  int width = 0, height = 0, channels = 3;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, int c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, fill) {}

  std::uint8_t& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  std::uint8_t at(int x, int y, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  bool empty() const { return pixels.empty(); }
  bool operator==(const Image&) const = default;
};

/// Binary mask stored as 0/1 bytes.
struct Mask {
  int width = 0, height = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(int w, int h) : width(w), height(h), bits(static_cast<std::size_t>(w) * h, 0) {}

  std::uint8_t& at(int x, int y) { return bits[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x]; }
  std::int64_t popcount() const;
  bool operator==(const Mask&) const = default;
};

Mask mask_from_bbox(int w, int h, const BBox& b);
Mask mask_or(const Mask& a, const Mask& b);
/// Tight box around set pixels; throws when the mask is empty.
BBox mask_bbox(const Mask& m);
/// Dilation by a k x k all-ones structuring element; pixels outside the
/// image count as unset. k must be odd.
Mask dilate_mask(const Mask& m, int k);

std::vector<std::uint8_t> encode_png(const Image& img);
Image decode_png(const std::vector<std::uint8_t>& bytes);
void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

/// Masks are written as single-channel {0, 255} PNGs.
Image mask_to_image(const Mask& m);
/// Any nonzero gray value counts as set.
Mask mask_from_image(const Image& img);

Image to_gray(const Image& img);
Image crop(const Image& img, const BBox& b);
/// Area-averaging downscale for integer factors, bilinear otherwise.
Image resize(const Image& img, int w, int h);

/// Stack same-size RGB images into [B, 3, H, W] scaled to [-1, 1].
Tensor<float> images_to_tensor(const std::vector<Image>& imgs);
Image tensor_to_image(const Tensor<float>& t, int b);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& data);
/// Write to a sibling temp file, then rename over the target.
void write_file_atomic(const std::filesystem::path& path, const std::string& data);

}  // namespace galaxyedit
