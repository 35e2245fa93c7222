#pragma once

#include <algorithm>
#include <functional>
#include <limits>
#include <set>

#include "ufc/image.hpp"
#include "ufc/pyramid.hpp"

namespace ufc {

/// Round-trip distance per target pixel; lower means more confident.
/// Entries where `valid` is 0 hold 0 and must be ignored.
template <typename T>
struct ConfidenceMap {
  Array<T> cycle_error;  // [H x W]
  std::vector<std::uint8_t> valid;

  std::size_t height() const { return cycle_error.dim(0); }
  std::size_t width() const { return cycle_error.dim(1); }
  T at(std::size_t x, std::size_t y) const { return cycle_error[y * width() + x]; }
};

struct ZoomConfig {
  std::vector<int> k_list{3, 4, 5};
  // Square side every image or window is resized to before matching; 0 keeps the native size.
  std::size_t resolution = 0;
  std::size_t min_window = 8;

  void validate() const {
    std::set<int> seen;
    for (int k : k_list) {
      if (k < 2) throw ConfigError("zoom: every k must be >= 2, got " + std::to_string(k));
      if (!seen.insert(k).second) throw ConfigError("zoom: duplicate k " + std::to_string(k));
    }
  }
};

/// Dense matcher: returns the target-to-source flow at the target's resolution.
template <typename T>
using Matcher = std::function<FlowField<T>(const Array<T>& source, const Array<T>& target)>;

namespace inference {

template <typename T>
Array<T> pixel_coords(const FlowField<T>& f) {
  const auto h = f.height(), w = f.width();
  std::vector<T> c(h * w * 2);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const auto i = y * w + x;
      c[2 * i] = T(x) + f.grid[2 * i];
      c[2 * i + 1] = T(y) + f.grid[2 * i + 1];
    }
  return Array<T>({h * w, 2}, std::move(c));
}

/// Backward warp: out(j) = i_s(j + F(j)). The mask is 0 where the sample
/// left the image or the flow itself was invalid.
template <typename T>
std::pair<Array<T>, std::vector<std::uint8_t>> warp_image(const Array<T>& i_s, const FlowField<T>& f) {
  if (i_s.rank() != 3 || i_s.dim(0) != f.height() || i_s.dim(1) != f.width()) {
    throw ContractError("warp_image: image " + to_string(i_s.shape()) + " vs flow " + to_string(f.grid.shape()));
  }
  auto s = bilinear_sample(i_s, pixel_coords(f));
  for (std::size_t i = 0; i < s.valid.size(); ++i) s.valid[i] = s.valid[i] && f.valid[i];
  return {reshape(s.values, i_s.shape()), std::move(s.valid)};
}

/// e(j) = |s + f_st(s) - j| with s = j + f_ts(j) and f_st sampled bilinearly.
template <typename T>
ConfidenceMap<T> cycle_confidence(const FlowField<T>& f_ts, const FlowField<T>& f_st) {
  if (f_ts.grid.shape() != f_st.grid.shape()) {
    throw ContractError("cycle_confidence: " + to_string(f_ts.grid.shape()) + " vs " + to_string(f_st.grid.shape()));
  }
  const auto h = f_ts.height(), w = f_ts.width();
  const auto coords = pixel_coords(f_ts);
  const auto back = bilinear_sample(f_st.grid, coords);
  std::vector<T> err(h * w, T(0));
  std::vector<std::uint8_t> valid(h * w, 0);
  for (std::size_t i = 0; i < h * w; ++i) {
    if (!back.valid[i] || !f_ts.valid[i]) continue;
    const double ex = double(coords[2 * i]) + double(back.values[2 * i]) - double(i % w);
    const double ey = double(coords[2 * i + 1]) + double(back.values[2 * i + 1]) - double(i / w);
    err[i] = static_cast<T>(std::hypot(ex, ey));
    valid[i] = 1;
  }
  return {Array<T>({h, w}, std::move(err)), std::move(valid)};
}

/// k x k tiling; the last row and column absorb the remainder.
inline std::vector<Rect> partition_rects(std::size_t height, std::size_t width, int k) {
  if (k < 2) throw ContractError("partition: k must be >= 2, got " + std::to_string(k));
  const auto kk = static_cast<std::size_t>(k);
  const auto bh = height / kk, bw = width / kk;
  if (bh == 0 || bw == 0) throw ContractError("partition: image smaller than k");
  std::vector<Rect> rects;
  for (std::size_t r = 0; r < kk; ++r)
    for (std::size_t c = 0; c < kk; ++c) {
      rects.push_back({c * bw, r * bh, c + 1 == kk ? width - c * bw : bw, r + 1 == kk ? height - r * bh : bh});
    }
  return rects;
}

template <typename T>
struct Window {
  Array<T> image;
  Rect rect;
};

template <typename T>
std::vector<Window<T>> partition(const Array<T>& image, int k) {
  std::vector<Window<T>> out;
  for (const auto& r : partition_rects(image.dim(0), image.dim(1), k)) out.push_back({crop(image, r), r});
  return out;
}

/// Transitive composition: F(j) = f_local(j) + f_coarse(j + f_local(j)).
template <typename T>
FlowField<T> compose_flow(const FlowField<T>& f_local, const FlowField<T>& f_coarse) {
  if (f_local.grid.shape() != f_coarse.grid.shape()) {
    throw ContractError("compose_flow: " + to_string(f_local.grid.shape()) + " vs " +
                        to_string(f_coarse.grid.shape()));
  }
  const auto w = f_local.width();
  const auto coords = pixel_coords(f_local);
  const auto s = bilinear_sample(f_coarse.grid, coords);
  std::vector<T> g(f_local.grid.size());
  std::vector<std::uint8_t> valid(f_local.pixels());
  for (std::size_t i = 0; i < valid.size(); ++i) {
    g[2 * i] = f_local.grid[2 * i] + s.values[2 * i];
    g[2 * i + 1] = f_local.grid[2 * i + 1] + s.values[2 * i + 1];
    const auto nx = static_cast<std::size_t>(std::lround(double(coords[2 * i])));
    const auto ny = static_cast<std::size_t>(std::lround(double(coords[2 * i + 1])));
    valid[i] = f_local.valid[i] && s.valid[i] && f_coarse.valid[ny * w + nx];
  }
  return {Array<T>(f_local.grid.shape(), std::move(g)), std::move(valid)};
}

/// Runs the matcher after resizing both inputs to `resolution` (if set) and
/// returns the flow rescaled to the native target size.
template <typename T>
FlowField<T> match_at(const Matcher<T>& matcher, const Array<T>& source, const Array<T>& target,
                      std::size_t resolution) {
  const auto h = target.dim(0), w = target.dim(1);
  if (resolution == 0 || (h == resolution && w == resolution)) return matcher(source, target);
  const auto f = matcher(bilinear_resize(source, resolution, resolution), bilinear_resize(target, resolution, resolution));
  return flowhead::upscale_flow(f, h, w);
}

template <typename T>
struct Candidate {
  int k;  // 0 for the coarse flow
  FlowField<T> flow;
  ConfidenceMap<T> confidence;
  bool usable(std::size_t i) const { return flow.valid[i] && confidence.valid[i]; }
};

template <typename T>
struct ZoomResult {
  FlowField<T> flow;
  ConfidenceMap<T> confidence;
  std::vector<int> selected;  // per pixel: k of the winning candidate, 0 for coarse
  std::vector<Candidate<T>> candidates;
  std::vector<std::string> warnings;
};

/// Per-pixel argmin of cycle error over candidates in order. Strict `<`
/// keeps earlier candidates on ties.
template <typename T>
ZoomResult<T> select(std::vector<Candidate<T>> candidates) {
  const auto& base = candidates.front();
  const auto h = base.flow.height(), w = base.flow.width(), n = h * w;
  std::vector<T> g(n * 2), err(n, T(0));
  std::vector<std::uint8_t> fvalid(n, 0), cvalid(n, 0);
  std::vector<int> selected(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const Candidate<T>* best = &candidates.front();
    for (const auto& c : candidates) {
      if (!c.usable(i)) continue;
      if (!best->usable(i) || c.confidence.cycle_error[i] < best->confidence.cycle_error[i]) best = &c;
    }
    g[2 * i] = best->flow.grid[2 * i];
    g[2 * i + 1] = best->flow.grid[2 * i + 1];
    fvalid[i] = best->flow.valid[i];
    cvalid[i] = best->confidence.valid[i];
    err[i] = best->confidence.cycle_error[i];
    selected[i] = best->k;
  }
  ZoomResult<T> out;
  out.flow = {Array<T>({h, w, 2}, std::move(g)), std::move(fvalid)};
  out.confidence = {Array<T>({h, w}, std::move(err)), std::move(cvalid)};
  out.selected = std::move(selected);
  out.candidates = std::move(candidates);
  return out;
}

/// Coarse align, match k x k window pairs for every k, compose, and keep
/// per pixel the candidate with the smallest cycle error. The coarse flow is
/// itself a candidate. k values are processed in ascending order whatever
/// order the config lists them in.
template <typename T>
ZoomResult<T> zoom_in(const Array<T>& i_s, const Array<T>& i_t, const Matcher<T>& matcher, const ZoomConfig& cfg) {
  cfg.validate();
  if (i_s.shape() != i_t.shape()) {
    throw ContractError("zoom_in: image shapes differ, " + to_string(i_s.shape()) + " vs " + to_string(i_t.shape()));
  }
  const auto h = i_t.dim(0), w = i_t.dim(1);
  const auto coarse = match_at(matcher, i_s, i_t, cfg.resolution);
  const auto coarse_rev = match_at(matcher, i_t, i_s, cfg.resolution);
  std::vector<Candidate<T>> candidates{{0, coarse, cycle_confidence(coarse, coarse_rev)}};
  std::vector<std::string> warnings;

  const auto warped = warp_image(i_s, coarse).first;
  auto ks = cfg.k_list;
  std::sort(ks.begin(), ks.end());
  for (int k : ks) {
    if (h / std::size_t(k) < cfg.min_window || w / std::size_t(k) < cfg.min_window) {
      warnings.push_back("zoom: k=" + std::to_string(k) + " skipped, windows smaller than " +
                         std::to_string(cfg.min_window) + " px");
      continue;
    }
    std::vector<T> local(h * w * 2, T(0)), err(h * w, T(0));
    std::vector<std::uint8_t> lvalid(h * w, 0), cvalid(h * w, 0);
    for (const auto& r : partition_rects(h, w, k)) {
      const auto ws = crop(warped, r), wt = crop(i_t, r);
      const auto fwd = match_at(matcher, ws, wt, cfg.resolution);
      const auto bwd = match_at(matcher, wt, ws, cfg.resolution);
      const auto conf = cycle_confidence(fwd, bwd);
      for (std::size_t y = 0; y < r.h; ++y)
        for (std::size_t x = 0; x < r.w; ++x) {
          const auto li = y * r.w + x, gi = (r.y0 + y) * w + r.x0 + x;
          local[2 * gi] = fwd.grid[2 * li];
          local[2 * gi + 1] = fwd.grid[2 * li + 1];
          lvalid[gi] = fwd.valid[li];
          err[gi] = conf.cycle_error[li];
          cvalid[gi] = conf.valid[li];
        }
    }
    const FlowField<T> lifted{Array<T>({h, w, 2}, std::move(local)), std::move(lvalid)};
    candidates.push_back({k, compose_flow(lifted, coarse), {Array<T>({h, w}, std::move(err)), std::move(cvalid)}});
  }
  auto out = select(std::move(candidates));
  out.warnings = std::move(warnings);
  return out;
}

/// Wraps the trained model as a matcher. Inputs are resized to the plan's
/// input extent and the flow is returned at the target's native size.
template <typename T>
Matcher<T> model_matcher(ParamSet<T> params, ModelConfig cfg) {
  return [params = std::move(params), cfg](const Array<T>& source, const Array<T>& target) {
    const auto e = cfg.plan.input_extent();
    auto fit = [e](const Array<T>& a) { return a.dim(0) == e && a.dim(1) == e ? a : bilinear_resize(a, e, e); };
    const auto out = model::forward(fit(source), fit(target), params, cfg);
    return flowhead::upscale_flow(out.flow, target.dim(0), target.dim(1));
  };
}

}  // namespace inference
}  // namespace ufc
