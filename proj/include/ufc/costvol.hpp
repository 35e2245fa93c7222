#pragma once

#include <array>

#include "ufc/backbone.hpp"

namespace ufc {

/// All pairwise similarities between a source and a target grid, stored as
/// [h x w x h x w] with source position major: flat index i * hw + j. A
/// slice over sources for fixed target j is therefore strided by hw.
template <typename T>
struct CostVolume {
  int level = 0;
  Array<T> grid;

  std::size_t extent() const { return grid.dim(0); }
  std::size_t pixels() const { return grid.dim(0) * grid.dim(1); }
  /// [hw_source x hw_target] view.
  Array<T> matrix() const { return reshape(grid, {pixels(), pixels()}); }
  T at(std::size_t i, std::size_t j) const { return grid[i * pixels() + j]; }
};

namespace costvol {

template <typename T>
CostVolume<T> from_matrix(int level, std::size_t extent, const Array<T>& m) {
  return {level, reshape(m, {extent, extent, extent, extent})};
}

/// C(i, j) = D_s(i) . D_t(j), one [hw x c] x [c x hw] product.
template <typename T>
CostVolume<T> build(const FeatureMap<T>& d_s, const FeatureMap<T>& d_t) {
  if (d_s.level != d_t.level) {
    throw ContractError("costvol::build: levels differ (" + std::to_string(d_s.level) + " vs " +
                        std::to_string(d_t.level) + ")");
  }
  if (d_s.grid.shape() != d_t.grid.shape()) {
    throw DimensionError("costvol::build: " + to_string(d_s.grid.shape()) + " vs " + to_string(d_t.grid.shape()));
  }
  return from_matrix(d_s.level, d_s.extent(), matmul(d_s.tokens(), transpose(d_t.tokens())));
}

/// Similarity of every source position to target pixel (jx, jy), as [h x w].
template <typename T>
Array<T> slice(const CostVolume<T>& c, std::size_t jx, std::size_t jy) {
  const auto s = c.extent(), n = c.pixels();
  if (jx >= s || jy >= s) throw ContractError("costvol::slice: target pixel out of bounds");
  const auto j = jy * s + jx;
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = c.grid[i * n + j];
  return Array<T>({s, s}, std::move(out));
}

/// Source-plane correlation with k_src followed by target-plane correlation
/// with k_tgt: a separable stand-in for a full 4D kernel.
template <typename T>
CostVolume<T> conv4d_separable(const CostVolume<T>& c, const Array<T>& k_src, const Array<T>& k_tgt) {
  return {c.level, plane_conv(plane_conv(c.grid, k_src, true), k_tgt, false)};
}

template <typename T>
CostVolume<T> residual_add(const CostVolume<T>& a, const CostVolume<T>& b) {
  if (a.level != b.level) throw ContractError("costvol::residual_add: level mismatch");
  return {a.level, add(a.grid, b.grid)};
}

/// Bilinear resize over the source plane, then over the target plane.
template <typename T>
CostVolume<T> upsample_cost(const CostVolume<T>& c, int to_level, std::size_t to_extent) {
  if (to_level < c.level) throw ContractError("costvol::upsample_cost: target level is coarser than the input");
  const auto s = c.extent(), S = to_extent;
  if (s == S) return {to_level, c.grid};
  const auto n = s * s, N = S * S;
  // [s, s, n] -> [S, S, n]
  auto src = bilinear_resize(reshape(c.grid, {s, s, n}), S, S);
  // [N, n] -> [n, N] -> [s, s, N] -> [S, S, N]
  auto tgt = bilinear_resize(reshape(transpose(reshape(src, {N, n})), {s, s, N}), S, S);
  return {to_level, reshape(transpose(reshape(tgt, {N, N})), {S, S, S, S})};
}

/// C* = sum over levels of each volume upsampled to the finest level,
/// accumulated coarse to fine.
template <typename T>
CostVolume<T> final_cost(const std::array<CostVolume<T>, 3>& per_level) {
  for (std::size_t l = 0; l < 3; ++l) {
    if (per_level[l].grid.empty()) throw ContractError("costvol::final_cost: missing level " + std::to_string(l + 1));
  }
  const auto& finest = per_level[2];
  const auto up = [&](std::size_t l) { return upsample_cost(per_level[l], finest.level, finest.extent()).grid; };
  return {finest.level, add(add(up(0), up(1)), finest.grid)};
}

}  // namespace costvol
}  // namespace ufc
