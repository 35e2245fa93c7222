#pragma once

#include <cstdint>

#include "ufc/aggregation.hpp"

namespace ufc {

/// Per-pixel displacement [H x W x 2] as (dx, dy) in pixels. Backward
/// convention: target pixel j matches source location j + F(j).
template <typename T>
struct FlowField {
  Array<T> grid;
  std::vector<std::uint8_t> valid;  // row-major H x W

  std::size_t height() const { return grid.dim(0); }
  std::size_t width() const { return grid.dim(1); }
  std::size_t pixels() const { return height() * width(); }
  T dx(std::size_t x, std::size_t y) const { return grid[(y * width() + x) * 2]; }
  T dy(std::size_t x, std::size_t y) const { return grid[(y * width() + x) * 2 + 1]; }
  std::size_t valid_count() const {
    std::size_t n = 0;
    for (auto v : valid) n += v;
    return n;
  }

  static FlowField constant(std::size_t h, std::size_t w, T dx, T dy) {
    std::vector<T> g(h * w * 2);
    for (std::size_t i = 0; i < h * w; ++i) g[2 * i] = dx, g[2 * i + 1] = dy;
    return {Array<T>({h, w, 2}, std::move(g)), std::vector<std::uint8_t>(h * w, 1)};
  }
  static FlowField zeros(std::size_t h, std::size_t w) { return constant(h, w, T(0), T(0)); }
};

/// Marks pixels whose matched location j + F(j) lies inside [0, W-1] x [0, H-1].
template <typename T>
std::vector<std::uint8_t> in_bounds_mask(const Array<T>& grid) {
  const auto h = grid.dim(0), w = grid.dim(1);
  std::vector<std::uint8_t> valid(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const auto i = y * w + x;
      const double sx = double(x) + double(grid[2 * i]), sy = double(y) + double(grid[2 * i + 1]);
      valid[i] = sx >= 0 && sx <= double(w - 1) && sy >= 0 && sy <= double(h - 1);
    }
  return valid;
}

struct ModelConfig {
  LevelPlan plan = LevelPlan::desk();
  AggregationConfig agg;
  double temperature = 0.02;
  bool hierarchy = true;  // false runs the finest level only

  int first_level() const { return hierarchy ? 1 : 3; }
  int depth() const { return 4 - first_level(); }
};

template <typename T>
struct LevelOutput {
  FeatureMap<T> in_s, in_t;  // block inputs after propagation
  CostVolume<T> in_cost;
  aggregation::BlockTrace<T> self;      // after the first self-attention
  FeatureMap<T> d_s, d_t;    // D''
  CostVolume<T> cost;        // C''
  bool present() const { return !cost.grid.empty(); }
};

template <typename T>
struct ModelOutput {
  std::array<LevelOutput<T>, 3> levels;
  CostVolume<T> c_star;
  FlowField<T> grid_flow;  // at the finest cost grid
  FlowField<T> flow;       // at image resolution
};

namespace flowhead {

/// p(i|j) = softmax_i(C*(i,j) / temperature); F(j) = sum_i p(i|j) pos(i) - pos(j),
/// in cost-grid pixels.
template <typename T>
FlowField<T> soft_argmax(const CostVolume<T>& c_star, double temperature) {
  if (!(temperature > 0)) throw DomainError("soft_argmax: temperature must be positive");
  const auto s = c_star.extent(), n = c_star.pixels();
  std::vector<T> pos(n * 2);
  for (std::size_t y = 0; y < s; ++y)
    for (std::size_t x = 0; x < s; ++x) pos[2 * (y * s + x)] = T(x), pos[2 * (y * s + x) + 1] = T(y);
  const Array<T> positions({n, 2}, std::move(pos));
  const auto p = softmax(c_star.matrix(), 0, static_cast<T>(temperature));
  const auto grid = reshape(sub(matmul(transpose(p), positions), positions), {s, s, 2});
  return {grid, in_bounds_mask(grid)};
}

/// Bilinear resize to [H x W] with displacements rescaled per axis.
template <typename T>
FlowField<T> upscale_flow(const FlowField<T>& f, std::size_t h, std::size_t w) {
  if (f.height() == h && f.width() == w) return f;
  const T sx = T(double(w) / double(f.width())), sy = T(double(h) / double(f.height()));
  std::vector<T> factors(h * w * 2);
  for (std::size_t i = 0; i < h * w; ++i) factors[2 * i] = sx, factors[2 * i + 1] = sy;
  const auto grid = mul(bilinear_resize(f.grid, h, w), Array<T>({h, w, 2}, std::move(factors)));
  return {grid, in_bounds_mask(grid)};
}

/// Mean endpoint error over pixels valid in both fields; differentiable in pred.
template <typename T>
Array<T> epe_loss(const FlowField<T>& pred, const FlowField<T>& gt) {
  if (pred.grid.shape() != gt.grid.shape()) {
    throw DimensionError("epe_loss: " + to_string(pred.grid.shape()) + " vs " + to_string(gt.grid.shape()));
  }
  std::vector<std::uint8_t> mask(pred.pixels());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = pred.valid[i] && gt.valid[i];
  return masked_epe(pred.grid, gt.grid, mask);
}

}  // namespace flowhead

namespace model {

/// Channel adapter applied to upsampled coarser features before adding them.
inline std::string lift(int level) { return "lift.l" + std::to_string(level) + ".w"; }

template <typename T>
ParameterStore<T> init(const ModelConfig& cfg, std::uint64_t seed) {
  ParameterStore<T> store;
  std::mt19937_64 rng(seed);
  backbone::register_params(store, cfg.plan, rng, cfg.depth());
  for (int l = cfg.first_level(); l <= 3; ++l) {
    const auto& lv = cfg.plan.level(l);
    aggregation::register_params(store, l, lv.extent, lv.proj_channels, cfg.agg, rng);
    if (l > cfg.first_level()) {
      const auto prev = cfg.plan.level(l - 1).proj_channels;
      std::normal_distribution<double> dist(0.0, std::sqrt(1.0 / double(prev)));
      std::vector<T> w(prev * lv.proj_channels);
      for (auto& v : w) v = static_cast<T>(dist(rng));
      store.add(lift(l), Array<T>({prev, lv.proj_channels}, std::move(w)));
    }
  }
  return store;
}

template <typename T>
ModelOutput<T> forward(const Array<T>& image_s, const Array<T>& image_t, const ParamSet<T>& p, const ModelConfig& cfg) {
  if (image_s.shape() != image_t.shape()) {
    throw ConfigError("forward: image shapes differ, " + to_string(image_s.shape()) + " vs " +
                      to_string(image_t.shape()));
  }
  if (image_s.rank() != 3 || image_s.dim(0) != image_s.dim(1)) {
    throw ConfigError("forward: images must be square [N x N x 3], got " + to_string(image_s.shape()));
  }
  const auto raw_s = backbone::extract_pyramid(image_s, p, cfg.plan, cfg.depth());
  const auto raw_t = backbone::extract_pyramid(image_t, p, cfg.plan, cfg.depth());

  ModelOutput<T> out;
  for (int l = cfg.first_level(); l <= 3; ++l) {
    const auto idx = static_cast<std::size_t>(l - 1);
    const auto s = cfg.plan.level(l).extent;
    auto ds = backbone::project(raw_s[idx], p, cfg.plan);
    auto dt = backbone::project(raw_t[idx], p, cfg.plan);
    const bool has_prev = l > cfg.first_level();
    if (has_prev) {
      const auto& prev = out.levels[idx - 1];
      auto lifted = [&](const FeatureMap<T>& f) {
        const auto up = bilinear_resize(f.grid, s, s);
        return reshape(matmul(reshape(up, {s * s, f.channels()}), p[lift(l)]), {s, s, ds.channels()});
      };
      ds = {l, add(ds.grid, lifted(prev.d_s))};
      dt = {l, add(dt.grid, lifted(prev.d_t))};
    }
    ds = backbone::l2_normalize(ds);
    dt = backbone::l2_normalize(dt);
    auto c = costvol::build(ds, dt);
    if (has_prev) c = costvol::residual_add(c, costvol::upsample_cost(out.levels[idx - 1].cost, l, s));

    auto& lo = out.levels[idx];
    lo.in_s = ds;
    lo.in_t = dt;
    lo.in_cost = c;
    auto agg = aggregation::attention_block(ds, dt, c, p, cfg.agg, &lo.self);
    lo.d_s = agg.d_s;
    lo.d_t = agg.d_t;
    lo.cost = agg.cost;
  }
  out.c_star = cfg.hierarchy ? costvol::final_cost<T>({out.levels[0].cost, out.levels[1].cost, out.levels[2].cost})
                             : out.levels[2].cost;
  out.grid_flow = flowhead::soft_argmax(out.c_star, cfg.temperature);
  out.flow = flowhead::upscale_flow(out.grid_flow, image_s.dim(0), image_s.dim(1));
  return out;
}

}  // namespace model
}  // namespace ufc
