#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "ufc/numerics/array.hpp"

namespace ufc {

enum class TextureKind { noise, checker, gradient, mixed };

namespace data {

/// Multi-octave value noise with quintic interpolation, one field per channel.
inline std::vector<double> value_noise(std::mt19937_64& rng, std::size_t extent, std::size_t channels, int octaves) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> out(extent * extent * channels, 0.0);
  double amp = 1.0;
  std::size_t cells = 4;
  for (int o = 0; o < octaves; ++o, amp *= 0.5, cells *= 2) {
    const auto side = cells + 1;
    std::vector<double> lattice(side * side * channels);
    for (auto& v : lattice) v = u(rng);
    const double step = double(cells) / double(extent);
    for (std::size_t y = 0; y < extent; ++y) {
      const double fy = (double(y) + 0.5) * step;
      const auto y0 = std::min(static_cast<std::size_t>(fy), cells - 1);
      double ty = fy - double(y0);
      ty = ty * ty * ty * (ty * (ty * 6 - 15) + 10);
      for (std::size_t x = 0; x < extent; ++x) {
        const double fx = (double(x) + 0.5) * step;
        const auto x0 = std::min(static_cast<std::size_t>(fx), cells - 1);
        double tx = fx - double(x0);
        tx = tx * tx * tx * (tx * (tx * 6 - 15) + 10);
        for (std::size_t c = 0; c < channels; ++c) {
          auto at = [&](std::size_t yy, std::size_t xx) { return lattice[(yy * side + xx) * channels + c]; };
          const double top = at(y0, x0) * (1 - tx) + at(y0, x0 + 1) * tx;
          const double bot = at(y0 + 1, x0) * (1 - tx) + at(y0 + 1, x0 + 1) * tx;
          out[(y * extent + x) * channels + c] += amp * (top * (1 - ty) + bot * ty);
        }
      }
    }
  }
  return out;
}

/// Rotated two-colour checkerboard.
inline std::vector<double> checkerboard(std::mt19937_64& rng, std::size_t extent) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double cell = double(extent) * (1.0 / 16 + u(rng) * (1.0 / 6 - 1.0 / 16));
  const double angle = u(rng) * std::numbers::pi / 2, px = u(rng) * cell, py = u(rng) * cell;
  const std::array<double, 3> a{u(rng), u(rng), u(rng)}, b{u(rng), u(rng), u(rng)};
  const double ca = std::cos(angle), sa = std::sin(angle);
  std::vector<double> out(extent * extent * 3);
  for (std::size_t y = 0; y < extent; ++y)
    for (std::size_t x = 0; x < extent; ++x) {
      const double rx = ca * double(x) + sa * double(y) + px, ry = -sa * double(x) + ca * double(y) + py;
      const bool odd = (static_cast<long>(std::floor(rx / cell)) + static_cast<long>(std::floor(ry / cell))) & 1;
      for (std::size_t c = 0; c < 3; ++c) out[(y * extent + x) * 3 + c] = odd ? a[c] : b[c];
    }
  return out;
}

/// Sum of random linear colour ramps and Gaussian blobs.
inline std::vector<double> gradient_composite(std::mt19937_64& rng, std::size_t extent) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double e = double(extent);
  std::vector<double> out(extent * extent * 3, 0.0);
  for (int g = 0; g < 3; ++g) {
    const double angle = u(rng) * 2 * std::numbers::pi, ca = std::cos(angle), sa = std::sin(angle);
    const std::array<double, 3> col{u(rng), u(rng), u(rng)};
    for (std::size_t y = 0; y < extent; ++y)
      for (std::size_t x = 0; x < extent; ++x) {
        const double t = 0.5 + (ca * (double(x) - e / 2) + sa * (double(y) - e / 2)) / e;
        for (std::size_t c = 0; c < 3; ++c) out[(y * extent + x) * 3 + c] += col[c] * t / 3;
      }
  }
  for (int k = 0; k < 6; ++k) {
    const double cx = u(rng) * e, cy = u(rng) * e, r = e * (0.03 + 0.12 * u(rng));
    const std::array<double, 3> col{u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5};
    for (std::size_t y = 0; y < extent; ++y)
      for (std::size_t x = 0; x < extent; ++x) {
        const double d2 = (double(x) - cx) * (double(x) - cx) + (double(y) - cy) * (double(y) - cy);
        const double g = std::exp(-d2 / (2 * r * r));
        for (std::size_t c = 0; c < 3; ++c) out[(y * extent + x) * 3 + c] += col[c] * g;
      }
  }
  return out;
}

inline void stretch_to_unit(std::vector<double>& v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double a = *lo, span = *hi - *lo;
  for (auto& x : v) x = span > 0 ? (x - a) / span : 0.5;
}

/// Procedural RGB texture in [0, 1], fully determined by (kind, seed, extent).
/// `mixed` overlays noise on a checkerboard or gradient base so that every
/// neighbourhood stays distinctive.
template <typename T>
Array<T> texture(TextureKind kind, std::uint64_t seed, std::size_t extent) {
  std::mt19937_64 rng(seed);
  std::vector<double> v;
  switch (kind) {
    case TextureKind::noise: v = value_noise(rng, extent, 3, 5); break;
    case TextureKind::checker: v = checkerboard(rng, extent); break;
    case TextureKind::gradient: v = gradient_composite(rng, extent); break;
    case TextureKind::mixed: {
      auto noise = value_noise(rng, extent, 3, 5);
      stretch_to_unit(noise);
      auto base = (rng() & 1) ? checkerboard(rng, extent) : gradient_composite(rng, extent);
      stretch_to_unit(base);
      v.resize(noise.size());
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.65 * noise[i] + 0.35 * base[i];
      break;
    }
  }
  stretch_to_unit(v);
  std::vector<T> out(v.begin(), v.end());
  return Array<T>({extent, extent, 3}, std::move(out));
}

}  // namespace data
}  // namespace ufc
