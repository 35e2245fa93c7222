#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <string>

#include "ufc/pyramid.hpp"

namespace ufc {

enum class WarpKind { affine, homography, tps };

inline std::string to_string(WarpKind k) {
  switch (k) {
    case WarpKind::affine: return "affine";
    case WarpKind::homography: return "homography";
    case WarpKind::tps: return "tps";
  }
  return "?";
}

inline WarpKind parse_warp_kind(const std::string& s) {
  if (s == "affine") return WarpKind::affine;
  if (s == "homography") return WarpKind::homography;
  if (s == "tps") return WarpKind::tps;
  throw ConfigError("unknown warp kind '" + s + "'");
}

using Point = std::array<double, 2>;

/// Thin-plate spline R^2 -> R^2 interpolating `values` at `nodes`.
/// Coordinates are divided by `unit` internally for conditioning.
struct Tps {
  std::vector<Point> nodes;
  std::vector<Point> weights;
  std::array<Point, 3> affine{};  // constant, x and y coefficients
  double unit = 1.0;

  static double kernel(double r2) { return r2 > 0 ? r2 * std::log(r2) : 0.0; }

  static Tps fit(const std::vector<Point>& nodes, const std::vector<Point>& values, double unit) {
    const auto n = nodes.size();
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(Eigen::Index(n + 3), Eigen::Index(n + 3));
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(Eigen::Index(n + 3), 2);
    for (std::size_t i = 0; i < n; ++i) {
      const double xi = nodes[i][0] / unit, yi = nodes[i][1] / unit;
      for (std::size_t j = 0; j < n; ++j) {
        const double dx = xi - nodes[j][0] / unit, dy = yi - nodes[j][1] / unit;
        a(Eigen::Index(i), Eigen::Index(j)) = kernel(dx * dx + dy * dy);
      }
      const auto r = Eigen::Index(i), c = Eigen::Index(n);
      a(r, c) = a(c, r) = 1.0;
      a(r, c + 1) = a(c + 1, r) = xi;
      a(r, c + 2) = a(c + 2, r) = yi;
      b(r, 0) = values[i][0] / unit;
      b(r, 1) = values[i][1] / unit;
    }
    const Eigen::MatrixXd sol = a.fullPivLu().solve(b);
    Tps t;
    t.nodes = nodes;
    t.unit = unit;
    t.weights.resize(n);
    for (std::size_t i = 0; i < n; ++i) t.weights[i] = {sol(Eigen::Index(i), 0), sol(Eigen::Index(i), 1)};
    for (std::size_t k = 0; k < 3; ++k) t.affine[k] = {sol(Eigen::Index(n + k), 0), sol(Eigen::Index(n + k), 1)};
    return t;
  }

  Point operator()(Point p) const {
    const double x = p[0] / unit, y = p[1] / unit;
    double ox = affine[0][0] + affine[1][0] * x + affine[2][0] * y;
    double oy = affine[0][1] + affine[1][1] * x + affine[2][1] * y;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const double dx = x - nodes[i][0] / unit, dy = y - nodes[i][1] / unit;
      const double u = kernel(dx * dx + dy * dy);
      ox += weights[i][0] * u;
      oy += weights[i][1] * u;
    }
    return {ox * unit, oy * unit};
  }
};

/// Maps source pixel coordinates to target pixel coordinates in a square
/// frame of side `extent`. Affine and homography warps are 3x3 matrices;
/// TPS warps carry a reverse fit as their inverse.
struct WarpSpec {
  WarpKind kind = WarpKind::affine;
  double strength = 0;
  std::size_t extent = 0;
  Eigen::Matrix3d matrix = Eigen::Matrix3d::Identity();
  Tps forward_tps, inverse_tps;
  std::vector<Point> control_src, control_dst;  // TPS control grid

  static Point project(const Eigen::Matrix3d& m, Point p) {
    const Eigen::Vector3d q = m * Eigen::Vector3d(p[0], p[1], 1.0);
    return {q[0] / q[2], q[1] / q[2]};
  }

  Point apply(Point p) const { return kind == WarpKind::tps ? forward_tps(p) : project(matrix, p); }
  Point apply_inverse(Point p) const {
    return kind == WarpKind::tps ? inverse_tps(p) : project(matrix.inverse(), p);
  }

  WarpSpec inverse() const {
    WarpSpec w = *this;
    if (kind == WarpKind::tps) {
      std::swap(w.forward_tps, w.inverse_tps);
      std::swap(w.control_src, w.control_dst);
    } else {
      w.matrix = matrix.inverse();
    }
    return w;
  }
};

namespace data {

inline Point frame_center(std::size_t extent) { return {0.5 * double(extent - 1), 0.5 * double(extent - 1)}; }

inline Eigen::Matrix3d affine_matrix(double angle, double sx, double sy, double tx, double ty, Point c) {
  Eigen::Matrix3d to_origin = Eigen::Matrix3d::Identity(), back = Eigen::Matrix3d::Identity();
  to_origin(0, 2) = -c[0];
  to_origin(1, 2) = -c[1];
  back(0, 2) = c[0] + tx;
  back(1, 2) = c[1] + ty;
  Eigen::Matrix3d rs = Eigen::Matrix3d::Identity();
  rs(0, 0) = std::cos(angle) * sx;
  rs(0, 1) = -std::sin(angle) * sy;
  rs(1, 0) = std::sin(angle) * sx;
  rs(1, 1) = std::cos(angle) * sy;
  return back * rs * to_origin;
}

/// Direct linear transform from four correspondences, computed on
/// coordinates scaled by 1/unit and normalized so m(2,2) = 1.
inline Eigen::Matrix3d homography_from_points(const std::array<Point, 4>& src, const std::array<Point, 4>& dst,
                                              double unit) {
  Eigen::Matrix<double, 8, 9> a;
  for (int i = 0; i < 4; ++i) {
    const double x = src[i][0] / unit, y = src[i][1] / unit, u = dst[i][0] / unit, v = dst[i][1] / unit;
    a.row(2 * i) << -x, -y, -1, 0, 0, 0, u * x, u * y, u;
    a.row(2 * i + 1) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
  }
  Eigen::JacobiSVD<Eigen::Matrix<double, 8, 9>> svd(a, Eigen::ComputeFullV);
  const Eigen::Matrix<double, 9, 1> h = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8];
  Eigen::Matrix3d s = Eigen::Matrix3d::Identity();
  s(0, 0) = s(1, 1) = 1.0 / unit;
  const Eigen::Matrix3d m = s.inverse() * hn * s;
  return m / m(2, 2);
}

/// Control grid side for TPS warps and density of the reverse fit.
inline constexpr std::size_t kTpsGrid = 3;
inline constexpr std::size_t kTpsInverseGrid = 21;

inline WarpSpec make_tps(const std::vector<Point>& src, const std::vector<Point>& dst, std::size_t extent) {
  WarpSpec w;
  w.kind = WarpKind::tps;
  w.extent = extent;
  w.control_src = src;
  w.control_dst = dst;
  const double unit = double(extent);
  w.forward_tps = Tps::fit(src, dst, unit);
  // Reverse fit: push a dense grid (reaching a quarter frame past each
  // border) through the forward map and interpolate back.
  std::vector<Point> fwd, back;
  for (std::size_t r = 0; r < kTpsInverseGrid; ++r)
    for (std::size_t c = 0; c < kTpsInverseGrid; ++c) {
      const Point p{-0.25 * unit + 1.5 * unit * double(c) / double(kTpsInverseGrid - 1),
                    -0.25 * unit + 1.5 * unit * double(r) / double(kTpsInverseGrid - 1)};
      back.push_back(p);
      fwd.push_back(w.forward_tps(p));
    }
  w.inverse_tps = Tps::fit(fwd, back, unit);
  return w;
}

/// Rejects draws that are singular or fold the frame (checked on the
/// doubled canvas that render_pair samples from).
inline bool well_conditioned(const WarpSpec& w) {
  const double e = double(w.extent);
  if (w.kind != WarpKind::tps) {
    if (std::abs(w.matrix.determinant()) <= 1e-6) return false;
    for (double x : {-0.5 * e, 1.5 * e})
      for (double y : {-0.5 * e, 1.5 * e}) {
        const double den = w.matrix(2, 0) * x + w.matrix(2, 1) * y + w.matrix(2, 2);
        if (den <= 1e-3) return false;
      }
    return true;
  }
  const double h = 1e-3 * e;
  for (int r = 0; r <= 8; ++r)
    for (int c = 0; c <= 8; ++c) {
      const Point p{e * (-0.25 + 1.5 * c / 8.0), e * (-0.25 + 1.5 * r / 8.0)};
      const auto px = w.apply({p[0] + h, p[1]}), mx = w.apply({p[0] - h, p[1]});
      const auto py = w.apply({p[0], p[1] + h}), my = w.apply({p[0], p[1] - h});
      const double j00 = (px[0] - mx[0]) / (2 * h), j01 = (py[0] - my[0]) / (2 * h);
      const double j10 = (px[1] - mx[1]) / (2 * h), j11 = (py[1] - my[1]) / (2 * h);
      if (j00 * j11 - j01 * j10 <= 0.1) return false;
    }
  return true;
}

inline WarpSpec draw_warp(WarpKind kind, std::mt19937_64& rng, double s, std::size_t extent) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double e = double(extent);
  const auto c = frame_center(extent);
  WarpSpec w;
  w.kind = kind;
  w.strength = s;
  w.extent = extent;
  switch (kind) {
    case WarpKind::affine: {
      const double angle = u(rng) * s * 15.0 * std::numbers::pi / 180.0;
      const double sx = 1.0 + 0.25 * s * u(rng), sy = 1.0 + 0.25 * s * u(rng);
      const double tx = 0.1 * s * e * u(rng), ty = 0.1 * s * e * u(rng);
      w.matrix = affine_matrix(angle, sx, sy, tx, ty, c);
      break;
    }
    case WarpKind::homography: {
      const double m = e - 1;
      const std::array<Point, 4> src{Point{0, 0}, Point{m, 0}, Point{m, m}, Point{0, m}};
      std::array<Point, 4> dst = src;
      for (auto& p : dst) {
        p[0] += 0.1 * s * e * u(rng);
        p[1] += 0.1 * s * e * u(rng);
      }
      w.matrix = homography_from_points(src, dst, e);
      break;
    }
    case WarpKind::tps: {
      std::vector<Point> src, dst;
      for (std::size_t r = 0; r < kTpsGrid; ++r)
        for (std::size_t col = 0; col < kTpsGrid; ++col) {
          const Point p{(e - 1) * double(col) / double(kTpsGrid - 1), (e - 1) * double(r) / double(kTpsGrid - 1)};
          src.push_back(p);
          dst.push_back({p[0] + 0.08 * s * e * u(rng), p[1] + 0.08 * s * e * u(rng)});
        }
      w = make_tps(src, dst, extent);
      w.strength = s;
      break;
    }
  }
  return w;
}

/// Reproducible random warp. Draws failing the built-in conditioning test
/// (or `accept`, when given) are redrawn up to 100 times.
inline WarpSpec sample_warp(WarpKind kind, std::uint64_t seed, double strength, std::size_t extent,
                            const std::function<bool(const WarpSpec&)>& accept = {}) {
  if (!(strength > 0 && strength <= 1)) throw ConfigError("sample_warp: strength must lie in (0, 1]");
  if (extent < 2) throw ConfigError("sample_warp: extent must be >= 2");
  std::mt19937_64 rng(seed);
  for (int attempt = 0; attempt < 100; ++attempt) {
    auto w = draw_warp(kind, rng, strength, extent);
    if (well_conditioned(w) && (!accept || accept(w))) return w;
  }
  throw GenerationError("sample_warp: 100 degenerate " + to_string(kind) + " draws for seed " + std::to_string(seed));
}

/// Backward ground truth over an H x W target grid: F(j) = w^-1(j) - j,
/// valid where w^-1(j) lands inside the frame.
template <typename T>
FlowField<T> warp_to_flow(const WarpSpec& w, std::size_t height, std::size_t width) {
  if (w.kind != WarpKind::tps && std::abs(w.matrix.determinant()) <= 1e-12) {
    throw ContractError("warp_to_flow: warp is not invertible");
  }
  std::vector<T> g(height * width * 2);
  std::vector<std::uint8_t> valid(height * width);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const auto i = y * width + x;
      const auto p = w.apply_inverse({double(x), double(y)});
      g[2 * i] = static_cast<T>(p[0] - double(x));
      g[2 * i + 1] = static_cast<T>(p[1] - double(y));
      valid[i] = p[0] >= 0 && p[0] <= double(width - 1) && p[1] >= 0 && p[1] <= double(height - 1);
    }
  return {Array<T>({height, width, 2}, std::move(g)), std::move(valid)};
}

}  // namespace data
}  // namespace ufc
