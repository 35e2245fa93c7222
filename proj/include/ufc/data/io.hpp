#pragma once

#include <png.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "ufc/pyramid.hpp"

namespace ufc::io {

namespace fs = std::filesystem;

inline constexpr float kFloMagic = 202021.25f;
inline constexpr std::uint32_t kMaxExtent = 1000000;

inline std::vector<unsigned char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const fs::path& path, const std::vector<unsigned char>& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

inline void put_u32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline std::uint32_t get_u32(const std::vector<unsigned char>& b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[at + std::size_t(i)]) << (8 * i);
  return v;
}

/// Sidecar holding the validity mask: same stem, ".mask" extension.
inline fs::path mask_path(const fs::path& flo) { return fs::path(flo).replace_extension(".mask"); }

/// Middlebury layout: float tag 202021.25, u32 width, u32 height, then
/// interleaved (u, v) float32, all little-endian. The mask goes to the
/// sidecar as u32 width, u32 height and LSB-first packed bits.
template <typename T>
void write_flo(const fs::path& path, const FlowField<T>& f) {
  const auto w = f.width(), h = f.height();
  if (w >= kMaxExtent || h >= kMaxExtent) throw ContractError("write_flo: extents must be < 1e6");
  std::vector<unsigned char> b;
  b.reserve(12 + w * h * 8);
  put_u32(b, std::bit_cast<std::uint32_t>(kFloMagic));
  put_u32(b, std::uint32_t(w));
  put_u32(b, std::uint32_t(h));
  for (std::size_t i = 0; i < w * h * 2; ++i) put_u32(b, std::bit_cast<std::uint32_t>(static_cast<float>(f.grid[i])));
  write_bytes(path, b);

  std::vector<unsigned char> m;
  put_u32(m, std::uint32_t(w));
  put_u32(m, std::uint32_t(h));
  m.resize(8 + (w * h + 7) / 8, 0);
  for (std::size_t i = 0; i < w * h; ++i)
    if (f.valid[i]) m[8 + i / 8] |= static_cast<unsigned char>(1u << (i % 8));
  write_bytes(mask_path(path), m);
}

/// Reads a .flo file and its mask sidecar; without a sidecar every pixel is valid.
template <typename T>
FlowField<T> read_flo(const fs::path& path) {
  const auto b = read_bytes(path);
  if (b.size() < 4) throw FormatError("flo: truncated tag", b.size());
  if (std::bit_cast<float>(get_u32(b, 0)) != kFloMagic) throw FormatError("flo: bad magic in " + path.string(), 0);
  if (b.size() < 12) throw FormatError("flo: truncated header", b.size());
  const auto w = get_u32(b, 4), h = get_u32(b, 8);
  if (w == 0 || w >= kMaxExtent) throw FormatError("flo: bad width " + std::to_string(w), 4);
  if (h == 0 || h >= kMaxExtent) throw FormatError("flo: bad height " + std::to_string(h), 8);
  const std::size_t n = std::size_t(w) * h;
  if (b.size() < 12 + n * 8) throw FormatError("flo: truncated payload in " + path.string(), b.size());
  std::vector<T> g(n * 2);
  for (std::size_t i = 0; i < n * 2; ++i) g[i] = static_cast<T>(std::bit_cast<float>(get_u32(b, 12 + 4 * i)));

  std::vector<std::uint8_t> valid(n, 1);
  const auto mp = mask_path(path);
  if (fs::exists(mp)) {
    const auto m = read_bytes(mp);
    if (m.size() < 8) throw FormatError("mask: truncated header", m.size());
    if (get_u32(m, 0) != w || get_u32(m, 4) != h) throw FormatError("mask: extents differ from the flow", 0);
    if (m.size() < 8 + (n + 7) / 8) throw FormatError("mask: truncated payload", m.size());
    for (std::size_t i = 0; i < n; ++i) valid[i] = (m[8 + i / 8] >> (i % 8)) & 1;
  }
  return {Array<T>({h, w, 2}, std::move(g)), std::move(valid)};
}

/// 8-bit RGB PNG to [H x W x 3] in [0, 1].
template <typename T>
Array<T> read_png(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("cannot open " + path.string());
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw FormatError("png: " + path.string() + ": " + img.message, 0);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> px(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, px.data(), 0, nullptr)) {
    throw FormatError("png: " + path.string() + ": " + img.message, 0);
  }
  std::vector<T> v(px.size());
  for (std::size_t i = 0; i < px.size(); ++i) v[i] = static_cast<T>(px[i]) / T(255);
  return Array<T>({img.height, img.width, 3}, std::move(v));
}

inline unsigned char quantize(double v) { return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255)); }

/// Writes [H x W x 3] as RGB or [H x W] / [H x W x 1] as grayscale, values
/// clamped to [0, 1].
template <typename T>
void write_png(const fs::path& path, const Array<T>& image) {
  const bool gray = image.rank() == 2 || (image.rank() == 3 && image.dim(2) == 1);
  if (!gray && !(image.rank() == 3 && image.dim(2) == 3)) {
    throw DimensionError("write_png: expected [H x W x 3] or [H x W], got " + to_string(image.shape()));
  }
  std::vector<unsigned char> px(image.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = quantize(double(image[i]));
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.dim(1));
  img.height = static_cast<png_uint_32>(image.dim(0));
  img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, px.data(), 0, nullptr)) {
    throw IoError("png: cannot write " + path.string() + ": " + img.message);
  }
}

}  // namespace ufc::io
