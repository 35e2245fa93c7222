#pragma once

#include <array>
#include <random>
#include <string>

#include "ufc/numerics/ops.hpp"
#include "ufc/numerics/params.hpp"

namespace ufc {

/// Extents and channel widths of the three pyramid levels, coarse to fine.
struct LevelPlan {
  struct Level {
    std::size_t extent;         // square grid side
    std::size_t raw_channels;   // backbone output width
    std::size_t proj_channels;  // width after projection
  };
  std::array<Level, 3> levels;

  static LevelPlan desk() { return {{{{8, 96, 48}, {16, 64, 32}, {32, 48, 24}}}}; }
  static LevelPlan paper() { return {{{{16, 2048, 384}, {32, 1024, 256}, {64, 512, 128}}}}; }
  /// Smallest plan that still exercises every code path (8x8 inputs).
  static LevelPlan tiny() { return {{{{2, 4, 3}, {4, 4, 3}, {8, 4, 3}}}}; }

  const Level& level(int l) const { return levels.at(static_cast<std::size_t>(l - 1)); }
  std::size_t finest_extent() const { return levels[2].extent; }
  /// Side of the square image the backbone consumes.
  std::size_t input_extent() const { return 2 * finest_extent(); }
  /// Total downsampling from the input to the coarsest level.
  std::size_t coarsest_stride() const { return input_extent() / levels[0].extent; }

  void validate() const {
    for (std::size_t i = 0; i < 3; ++i) {
      const auto& lv = levels[i];
      if (lv.extent == 0 || lv.raw_channels == 0 || lv.proj_channels == 0) {
        throw ConfigError("level plan: extents and channels must be positive");
      }
      if (i > 0 && lv.extent != 2 * levels[i - 1].extent) {
        throw ConfigError("level plan: each finer level must double the coarser extent");
      }
    }
  }

  bool operator==(const LevelPlan& o) const {
    for (std::size_t i = 0; i < 3; ++i) {
      const auto &a = levels[i], &b = o.levels[i];
      if (a.extent != b.extent || a.raw_channels != b.raw_channels || a.proj_channels != b.proj_channels) return false;
    }
    return true;
  }
};

/// Dense descriptor grid [h x w x c] tagged with its pyramid level (1 = coarsest).
template <typename T>
struct FeatureMap {
  int level = 0;
  Array<T> grid;

  std::size_t extent() const { return grid.dim(0); }
  std::size_t channels() const { return grid.dim(2); }
  std::size_t pixels() const { return grid.dim(0) * grid.dim(1); }
  /// [hw x c] view for token-wise math.
  Array<T> tokens() const { return reshape(grid, {pixels(), channels()}); }
};

namespace backbone {

inline std::string conv_weight(int i) { return "backbone.conv" + std::to_string(i) + ".w"; }
inline std::string conv_bias(int i) { return "backbone.conv" + std::to_string(i) + ".b"; }
inline std::string projection(int level) { return "proj.l" + std::to_string(level) + ".w"; }

/// Registers the six-conv stack (two 3x3 convs per level, the first strided)
/// and the per-level projections. `depth` < 3 keeps only the finest levels.
template <typename T>
void register_params(ParameterStore<T>& store, const LevelPlan& plan, std::mt19937_64& rng, int depth = 3) {
  plan.validate();
  if (depth < 1 || depth > 3) throw ConfigError("backbone: depth must be 1, 2 or 3");
  auto normal = [&](Shape shape, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<T> v(numel(shape));
    for (auto& x : v) x = static_cast<T>(dist(rng));
    return Array<T>(std::move(shape), std::move(v));
  };
  std::size_t cin = 3;
  int conv = 0;
  for (int l = 3; l > 3 - depth; --l) {
    const auto c = plan.level(l).raw_channels;
    for (int rep = 0; rep < 2; ++rep) {
      const auto in = rep == 0 ? cin : c;
      store.add(conv_weight(conv), normal({3, 3, in, c}, std::sqrt(2.0 / (9.0 * in))));
      store.add(conv_bias(conv), Array<T>::zeros({c}));
      ++conv;
    }
    cin = c;
  }
  for (int l = 4 - depth; l <= 3; ++l) {
    const auto& lv = plan.level(l);
    store.add(projection(l), normal({lv.raw_channels, lv.proj_channels}, std::sqrt(1.0 / lv.raw_channels)));
  }
}

/// Three raw feature maps (coarse to fine) from an [H x W x 3] image. The
/// image is resized to the plan's input extent first, so the pyramid always
/// has the planned extents. With `depth` < 3 the coarser entries stay empty.
template <typename T>
std::array<FeatureMap<T>, 3> extract_pyramid(const Array<T>& image, const ParamSet<T>& params, const LevelPlan& plan,
                                             int depth = 3) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw DimensionError("extract_pyramid: expected [H x W x 3] image, got " + to_string(image.shape()));
  }
  const auto stride = plan.coarsest_stride();
  if (image.dim(0) % stride != 0 || image.dim(1) % stride != 0) {
    throw ConfigError("extract_pyramid: image extents " + to_string(image.shape()) + " not divisible by " +
                      std::to_string(stride));
  }
  std::array<FeatureMap<T>, 3> out;
  const auto side = plan.input_extent();
  Array<T> x = image.dim(0) == side && image.dim(1) == side ? image : bilinear_resize(image, side, side);
  int conv = 0;
  for (int l = 3; l > 3 - depth; --l) {
    for (int rep = 0; rep < 2; ++rep) {
      x = silu(add_row(conv2d(x, params[conv_weight(conv)], rep == 0 ? 2 : 1), params[conv_bias(conv)]));
      ++conv;
    }
    out[static_cast<std::size_t>(l - 1)] = {l, x};
  }
  return out;
}

/// Pointwise linear map to the projected width.
template <typename T>
FeatureMap<T> project(const FeatureMap<T>& f, const ParamSet<T>& params, const LevelPlan& plan) {
  const auto& lv = plan.level(f.level);
  const auto& w = params[projection(f.level)];
  if (f.channels() != lv.raw_channels || w.dim(0) != f.channels() || w.dim(1) != lv.proj_channels) {
    throw DimensionError("project: level " + std::to_string(f.level) + " map " + to_string(f.grid.shape()) +
                         " vs weight " + to_string(w.shape()));
  }
  const auto s = f.extent();
  return {f.level, reshape(matmul(f.tokens(), w), {s, s, lv.proj_channels})};
}

template <typename T>
FeatureMap<T> l2_normalize(const FeatureMap<T>& f) {
  return {f.level, ufc::l2_normalize(f.grid)};
}

}  // namespace backbone
}  // namespace ufc
