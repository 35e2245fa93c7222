#pragma once

#include <array>
#include <cmath>
#include <limits>

#include "ufc/pyramid.hpp"

namespace ufc {

struct Keypoint {
  double x = 0, y = 0;
  long id = -1;
  bool matched = true;  // false when transfer found no target within tolerance
};

namespace eval {

inline constexpr std::array<double, 5> kPckAlphas{0.01, 0.03, 0.05, 0.1, 0.15};
inline constexpr double kUnmatchedDistance = 2.0;

/// Mean endpoint error over pixels valid in both fields.
template <typename T>
double aepe(const FlowField<T>& pred, const FlowField<T>& gt) {
  if (pred.grid.shape() != gt.grid.shape()) {
    throw DimensionError("aepe: " + to_string(pred.grid.shape()) + " vs " + to_string(gt.grid.shape()));
  }
  double total = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < pred.pixels(); ++i) {
    if (!pred.valid[i] || !gt.valid[i]) continue;
    total += std::hypot(double(pred.grid[2 * i]) - double(gt.grid[2 * i]),
                        double(pred.grid[2 * i + 1]) - double(gt.grid[2 * i + 1]));
    ++count;
  }
  if (count == 0) throw EvaluationError("aepe: no pixel is valid in both flows");
  return total / double(count);
}

namespace detail {

/// Flow bilinearly interpolated at a continuous target location (clamped).
template <typename T>
std::array<double, 2> flow_at(const FlowField<T>& f, double x, double y) {
  const auto w = f.width(), h = f.height();
  x = std::clamp(x, 0.0, double(w - 1));
  y = std::clamp(y, 0.0, double(h - 1));
  const auto x0 = static_cast<std::size_t>(std::floor(x)), y0 = static_cast<std::size_t>(std::floor(y));
  const auto x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double fx = x - double(x0), fy = y - double(y0);
  std::array<double, 2> out{};
  for (std::size_t c = 0; c < 2; ++c) {
    auto at = [&](std::size_t xx, std::size_t yy) { return double(f.grid[(yy * w + xx) * 2 + c]); };
    out[c] = (1 - fy) * ((1 - fx) * at(x0, y0) + fx * at(x1, y0)) + fy * ((1 - fx) * at(x0, y1) + fx * at(x1, y1));
  }
  return out;
}

}  // namespace detail

/// Moves source keypoints to the target through a backward flow: grid
/// argmin of |j + F(j) - p| over valid target pixels, then a few
/// Gauss-Newton steps on the bilinear flow. Points whose best grid match is
/// farther than 2 px are flagged unmatched and left at the grid argmin.
template <typename T>
std::vector<Keypoint> transfer_keypoints(const FlowField<T>& f, const std::vector<Keypoint>& kps) {
  const auto w = f.width(), h = f.height();
  std::vector<Keypoint> out;
  out.reserve(kps.size());
  for (const auto& kp : kps) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t i = 0; i < w * h; ++i) {
      if (!f.valid[i]) continue;
      const double mx = double(i % w) + double(f.grid[2 * i]), my = double(i / w) + double(f.grid[2 * i + 1]);
      const double d = (mx - kp.x) * (mx - kp.x) + (my - kp.y) * (my - kp.y);
      if (d < best) best = d, arg = i;
    }
    Keypoint t{double(arg % w), double(arg / w), kp.id, std::sqrt(best) <= kUnmatchedDistance};
    if (!t.matched) {
      out.push_back(t);
      continue;
    }
    auto residual = [&](double x, double y) {
      const auto fl = detail::flow_at(f, x, y);
      return std::array<double, 2>{x + fl[0] - kp.x, y + fl[1] - kp.y};
    };
    auto r = residual(t.x, t.y);
    for (int it = 0; it < 8; ++it) {
      const double e = 0.25;
      const auto rxp = residual(t.x + e, t.y), rxm = residual(t.x - e, t.y);
      const auto ryp = residual(t.x, t.y + e), rym = residual(t.x, t.y - e);
      const double a = (rxp[0] - rxm[0]) / (2 * e), b = (ryp[0] - rym[0]) / (2 * e);
      const double c = (rxp[1] - rxm[1]) / (2 * e), d = (ryp[1] - rym[1]) / (2 * e);
      const double det = a * d - b * c;
      if (std::abs(det) < 1e-9) break;
      const double nx = std::clamp(t.x - (d * r[0] - b * r[1]) / det, 0.0, double(w - 1));
      const double ny = std::clamp(t.y - (-c * r[0] + a * r[1]) / det, 0.0, double(h - 1));
      const auto nr = residual(nx, ny);
      if (std::hypot(nr[0], nr[1]) >= std::hypot(r[0], r[1])) break;
      t.x = nx, t.y = ny, r = nr;
    }
    out.push_back(t);
  }
  return out;
}

/// Fraction of keypoints within alpha * max(h_ref, w_ref) of ground truth
/// (boundary inclusive). Unmatched predictions count as misses.
inline double pck(const std::vector<Keypoint>& pred, const std::vector<Keypoint>& gt, double alpha, double h_ref,
                  double w_ref) {
  if (pred.empty() || gt.empty()) throw EvaluationError("pck: empty keypoint list");
  if (pred.size() != gt.size()) throw ContractError("pck: keypoint lists differ in length");
  if (!(alpha > 0)) throw DomainError("pck: alpha must be positive");
  const double threshold = alpha * std::max(h_ref, w_ref);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].id != gt[i].id) throw ContractError("pck: keypoint ids are not aligned");
    hits += pred[i].matched && std::hypot(pred[i].x - gt[i].x, pred[i].y - gt[i].y) <= threshold;
  }
  return double(hits) / double(pred.size());
}

struct PairReport {
  double aepe = 0;
  std::array<double, kPckAlphas.size()> pck{};
  std::size_t keypoints = 0;
};

/// Source keypoints on a regular grid (step px, offset by half a step).
inline std::vector<Keypoint> grid_keypoints(std::size_t h, std::size_t w, std::size_t step) {
  std::vector<Keypoint> kps;
  long id = 0;
  for (std::size_t y = step / 2; y < h; y += step)
    for (std::size_t x = step / 2; x < w; x += step) kps.push_back({double(x), double(y), id++, true});
  return kps;
}

/// AEPE plus PCK for grid keypoints transferred through both flows, with
/// the image as the reference box. Keypoints the ground truth cannot
/// transfer are dropped.
template <typename T>
PairReport evaluate_pair(const FlowField<T>& pred, const FlowField<T>& gt, std::size_t step = 16) {
  PairReport r;
  r.aepe = aepe(pred, gt);
  const auto src = grid_keypoints(gt.height(), gt.width(), step);
  const auto kg = transfer_keypoints(gt, src), kp = transfer_keypoints(pred, src);
  std::vector<Keypoint> g, p;
  for (std::size_t i = 0; i < src.size(); ++i)
    if (kg[i].matched) g.push_back(kg[i]), p.push_back(kp[i]);
  if (g.empty()) throw EvaluationError("evaluate_pair: ground truth transfers no keypoint");
  r.keypoints = g.size();
  for (std::size_t a = 0; a < kPckAlphas.size(); ++a)
    r.pck[a] = pck(p, g, kPckAlphas[a], double(gt.height()), double(gt.width()));
  return r;
}

}  // namespace eval
}  // namespace ufc
