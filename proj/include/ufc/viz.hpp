#pragma once

#include <Eigen/Dense>

#include "ufc/pyramid.hpp"

namespace ufc::viz {

/// Nearest-neighbour enlargement by an integer factor.
template <typename T>
Array<T> enlarge(const Array<T>& img, std::size_t factor) {
  if (factor <= 1) return img;
  const auto h = img.dim(0), w = img.dim(1), c = img.rank() == 3 ? img.dim(2) : 1;
  std::vector<T> out(h * w * c * factor * factor);
  for (std::size_t y = 0; y < h * factor; ++y)
    for (std::size_t x = 0; x < w * factor; ++x)
      for (std::size_t k = 0; k < c; ++k) out[(y * w * factor + x) * c + k] = img[((y / factor) * w + x / factor) * c + k];
  Shape shape{h * factor, w * factor};
  if (img.rank() == 3) shape.push_back(c);
  return Array<T>(shape, std::move(out));
}

/// Projects the descriptors of both maps onto their joint top-3 principal
/// axes and maps each axis to a colour channel by its joint range. Zero
/// variance yields a uniform mid-gray image.
template <typename T>
std::pair<Array<T>, Array<T>> pca_rgb(const FeatureMap<T>& a, const FeatureMap<T>& b) {
  const auto c = a.channels();
  if (b.channels() != c) throw DimensionError("pca_rgb: channel counts differ");
  const auto na = a.pixels(), nb = b.pixels(), n = na + nb;
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(c));
  for (std::size_t i = 0; i < na * c; ++i) x(Eigen::Index(i / c), Eigen::Index(i % c)) = double(a.grid[i]);
  for (std::size_t i = 0; i < nb * c; ++i) x(Eigen::Index(na + i / c), Eigen::Index(i % c)) = double(b.grid[i]);
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  const Eigen::MatrixXd cov = (x.transpose() * x) / double(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const auto comps = std::min<std::size_t>(3, c);
  Eigen::MatrixXd axes = Eigen::MatrixXd::Zero(Eigen::Index(c), 3);
  for (std::size_t k = 0; k < comps; ++k) {
    Eigen::VectorXd v = es.eigenvectors().col(Eigen::Index(c - 1 - k));  // ascending order
    Eigen::Index big = 0;
    v.cwiseAbs().maxCoeff(&big);
    if (v[big] < 0) v = -v;  // fixed sign for reproducible colours
    if (es.eigenvalues()[Eigen::Index(c - 1 - k)] > 1e-12) axes.col(Eigen::Index(k)) = v;
  }
  const Eigen::MatrixXd proj = x * axes;
  std::vector<T> rgb(n * 3);
  for (Eigen::Index k = 0; k < 3; ++k) {
    const double lo = proj.col(k).minCoeff(), hi = proj.col(k).maxCoeff();
    for (Eigen::Index i = 0; i < Eigen::Index(n); ++i) {
      rgb[std::size_t(i) * 3 + std::size_t(k)] = static_cast<T>(hi - lo > 1e-12 ? (proj(i, k) - lo) / (hi - lo) : 0.5);
    }
  }
  const auto s_a = a.extent(), s_b = b.extent();
  return {Array<T>({s_a, a.grid.dim(1), 3}, std::vector<T>(rgb.begin(), rgb.begin() + std::ptrdiff_t(na * 3))),
          Array<T>({s_b, b.grid.dim(1), 3}, std::vector<T>(rgb.begin() + std::ptrdiff_t(na * 3), rgb.end()))};
}

/// Min-max normalized copy in [0, 1]; a constant input maps to zeros.
template <typename T>
Array<T> normalize_range(const Array<T>& x) {
  const auto v = x.to_vector();
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double a = *lo, span = double(*hi) - a;
  std::vector<T> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<T>(span > 0 ? (double(v[i]) - a) / span : 0.0);
  return Array<T>(x.shape(), std::move(out));
}

}  // namespace ufc::viz
