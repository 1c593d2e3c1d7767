#include "galaxyedit/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

namespace galaxyedit {

BBox clamp_bbox(const BBox& b, int w, int h) {
  return {std::clamp(b.x0, 0, w), std::clamp(b.y0, 0, h), std::clamp(b.x1, 0, w), std::clamp(b.y1, 0, h)};
}

BBox bbox_union(const BBox& a, const BBox& b) {
  return {std::min(a.x0, b.x0), std::min(a.y0, b.y0), std::max(a.x1, b.x1), std::max(a.y1, b.y1)};
}

double bbox_iou(const BBox& a, const BBox& b) {
  const int ix = std::max(0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const int iy = std::max(0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const double inter = static_cast<double>(ix) * iy;
  const double uni = static_cast<double>(a.area()) + static_cast<double>(b.area()) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

std::int64_t Mask::popcount() const {
  std::int64_t n = 0;
  for (auto b : bits) n += b != 0;
  return n;
}

Mask mask_from_bbox(int w, int h, const BBox& b) {
  Mask m(w, h);
  const BBox c = clamp_bbox(b, w, h);
  for (int y = c.y0; y < c.y1; ++y)
    for (int x = c.x0; x < c.x1; ++x) m.at(x, y) = 1;
  return m;
}

Mask mask_or(const Mask& a, const Mask& b) {
  if (a.width != b.width || a.height != b.height) throw ShapeError("mask_or: size mismatch");
  Mask out(a.width, a.height);
  for (std::size_t i = 0; i < a.bits.size(); ++i) out.bits[i] = (a.bits[i] | b.bits[i]) ? 1 : 0;
  return out;
}

BBox mask_bbox(const Mask& m) {
  BBox b{m.width, m.height, 0, 0};
  bool any = false;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (m.at(x, y)) {
        any = true;
        b.x0 = std::min(b.x0, x);
        b.y0 = std::min(b.y0, y);
        b.x1 = std::max(b.x1, x + 1);
        b.y1 = std::max(b.y1, y + 1);
      }
  if (!any) throw ShapeError("mask_bbox: empty mask");
  return b;
}

Mask dilate_mask(const Mask& m, int k) {
  if (k < 1 || k % 2 == 0) throw std::invalid_argument("dilate_mask: kernel size must be odd and >= 1, got " + std::to_string(k));
  const int r = k / 2, W = m.width, H = m.height;
  // Square element: a horizontal pass then a vertical pass, each a windowed
  // count over a prefix sum.
  Mask rows(W, H), out(W, H);
  std::vector<int> pre(static_cast<std::size_t>(std::max(W, H)) + 1);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) pre[x + 1] = pre[x] + (m.at(x, y) != 0);
    for (int x = 0; x < W; ++x) rows.at(x, y) = pre[std::min(W, x + r + 1)] - pre[std::max(0, x - r)] > 0;
  }
  for (int x = 0; x < W; ++x) {
    for (int y = 0; y < H; ++y) pre[y + 1] = pre[y] + rows.at(x, y);
    for (int y = 0; y < H; ++y) out.at(x, y) = pre[std::min(H, y + r + 1)] - pre[std::max(0, y - r)] > 0;
  }
  return out;
}

namespace {

png_uint_32 png_format(int channels) {
  if (channels == 1) return PNG_FORMAT_GRAY;
  if (channels == 3) return PNG_FORMAT_RGB;
  throw ShapeError("png: unsupported channel count " + std::to_string(channels));
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image& img) {
  if (img.width <= 0 || img.height <= 0) throw ShapeError("encode_png: empty image");
  png_image p{};
  p.version = PNG_IMAGE_VERSION;
  p.width = static_cast<png_uint_32>(img.width);
  p.height = static_cast<png_uint_32>(img.height);
  p.format = png_format(img.channels);
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&p, nullptr, &size, 0, img.pixels.data(), 0, nullptr))
    throw std::runtime_error(std::string("encode_png: ") + p.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&p, out.data(), &size, 0, img.pixels.data(), 0, nullptr))
    throw std::runtime_error(std::string("encode_png: ") + p.message);
  out.resize(size);
  return out;
}

Image decode_png(const std::vector<std::uint8_t>& bytes) {
  png_image p{};
  p.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&p, bytes.data(), bytes.size()))
    throw std::runtime_error(std::string("decode_png: ") + p.message);
  const bool gray = (p.format & PNG_FORMAT_FLAG_COLOR) == 0;
  p.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Image img(static_cast<int>(p.width), static_cast<int>(p.height), gray ? 1 : 3);
  if (!png_image_finish_read(&p, nullptr, img.pixels.data(), 0, nullptr)) {
    png_image_free(&p);
    throw std::runtime_error(std::string("decode_png: ") + p.message);
  }
  return img;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::string& data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw std::runtime_error("short write to " + path.string());
}

void write_file_atomic(const std::filesystem::path& path, const std::string& data) {
  auto tmp = path;
  tmp += ".tmp";
  write_file(tmp, data);
  std::filesystem::rename(tmp, path);
}

void write_png(const std::filesystem::path& path, const Image& img) {
  const auto bytes = encode_png(img);
  write_file(path, std::string(bytes.begin(), bytes.end()));
}

Image read_png(const std::filesystem::path& path) { return decode_png(read_file(path)); }

Image mask_to_image(const Mask& m) {
  Image img(m.width, m.height, 1);
  for (std::size_t i = 0; i < m.bits.size(); ++i) img.pixels[i] = m.bits[i] ? 255 : 0;
  return img;
}

Mask mask_from_image(const Image& img) {
  const Image g = img.channels == 1 ? img : to_gray(img);
  Mask m(g.width, g.height);
  for (std::size_t i = 0; i < g.pixels.size(); ++i) m.bits[i] = g.pixels[i] ? 1 : 0;
  return m;
}

Image to_gray(const Image& img) {
  if (img.channels == 1) return img;
  Image g(img.width, img.height, 1);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      // Integer BT.601 luma.
      const int v = 299 * img.at(x, y, 0) + 587 * img.at(x, y, 1) + 114 * img.at(x, y, 2);
      g.at(x, y, 0) = static_cast<std::uint8_t>((v + 500) / 1000);
    }
  return g;
}

Image crop(const Image& img, const BBox& b) {
  if (!b.valid_in(img.width, img.height)) throw ShapeError("crop: box outside image");
  Image out(b.width(), b.height(), img.channels);
  for (int y = 0; y < b.height(); ++y)
    std::copy_n(&img.pixels[(static_cast<std::size_t>(b.y0 + y) * img.width + b.x0) * img.channels],
                static_cast<std::size_t>(b.width()) * img.channels,
                &out.pixels[static_cast<std::size_t>(y) * b.width() * img.channels]);
  return out;
}

Image resize(const Image& img, int w, int h) {
  if (w <= 0 || h <= 0) throw ShapeError("resize: target size must be positive");
  Image out(w, h, img.channels);
  if (img.width % w == 0 && img.height % h == 0) {
    const int fx = img.width / w, fy = img.height / h;
    const int n = fx * fy;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < img.channels; ++c) {
          int s = 0;
          for (int dy = 0; dy < fy; ++dy)
            for (int dx = 0; dx < fx; ++dx) s += img.at(x * fx + dx, y * fy + dy, c);
          out.at(x, y, c) = static_cast<std::uint8_t>((s + n / 2) / n);
        }
    return out;
  }
  const double sx = static_cast<double>(img.width) / w, sy = static_cast<double>(img.height) / h;
  for (int y = 0; y < h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
    const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, img.height - 1);
    const double ty = fy - y0;
    for (int x = 0; x < w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
      const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, img.width - 1);
      const double tx = fx - x0;
      for (int c = 0; c < img.channels; ++c) {
        const double v = (1 - ty) * ((1 - tx) * img.at(x0, y0, c) + tx * img.at(x1, y0, c)) +
                         ty * ((1 - tx) * img.at(x0, y1, c) + tx * img.at(x1, y1, c));
        out.at(x, y, c) = static_cast<std::uint8_t>(std::lround(v));
      }
    }
  }
  return out;
}

Tensor<float> images_to_tensor(const std::vector<Image>& imgs) {
  if (imgs.empty()) return {};
  const int w = imgs[0].width, h = imgs[0].height;
  Tensor<float> t(static_cast<int>(imgs.size()), 3, h, w);
  for (std::size_t b = 0; b < imgs.size(); ++b) {
    const Image& im = imgs[b];
    if (im.width != w || im.height != h || im.channels != 3) throw ShapeError("images_to_tensor: inconsistent images");
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) t.at(static_cast<int>(b), c, y, x) = im.at(x, y, c) / 127.5f - 1.0f;
  }
  return t;
}

Image tensor_to_image(const Tensor<float>& t, int b) {
  if (t.c() != 3) throw ShapeError("tensor_to_image: expected 3 channels, got " + t.shape().str());
  Image im(t.w(), t.h(), 3);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < t.h(); ++y)
      for (int x = 0; x < t.w(); ++x) {
        const float v = std::clamp(t.at(b, c, y, x), -1.0f, 1.0f);
        im.at(x, y, c) = static_cast<std::uint8_t>(std::lround((v + 1.0f) * 127.5f));
      }
  return im;
}

}  // namespace galaxyedit
