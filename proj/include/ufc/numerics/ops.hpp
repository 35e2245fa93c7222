#pragma once

// Differentiable operations on Array. Each op computes its value eagerly and,
// when any input is tracked, records a gradient closure on the shared tape.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ufc/numerics/array.hpp"
#include "ufc/numerics/parallel.hpp"

namespace ufc {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;

// Row chunk used by matmul. Fixed so results do not depend on the thread count.
inline constexpr std::size_t kMatmulGrain = 128;

template <typename T>
Array<T> finish(Tape<T>* tape, Shape shape, std::vector<T> values, typename Tape<T>::GradFn fn) {
  Array<T> out(std::move(shape), std::move(values));
  if (!tape) return out;
  return tape->record(std::move(out), std::move(fn));
}

inline void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         to_string(s));
  }
}

inline void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

// Source index pair and blend weight for one output coordinate of a bilinear
// resize (pixel centers at (i + 0.5) / extent).
struct Tap {
  std::size_t lo;
  std::size_t hi;
  double w;
};

inline std::vector<Tap> resize_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    const auto hi = std::min(lo + 1, in - 1);
    taps[o] = {lo, hi, src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Structural ops

template <typename T>
Array<T> reshape(const Array<T>& a, Shape shape) {
  Array<T> view = a.detached().with_shape(std::move(shape));
  auto* tape = detail::common_tape<T>({&a});
  if (!tape) return view;
  return tape->record(std::move(view), [a](Tape<T>& t, std::span<const T> g) { t.accumulate(a, g); });
}

template <typename T>
Array<T> transpose(const Array<T>& a) {
  detail::require_rank(a.shape(), 2, "transpose");
  const auto m = a.dim(0), n = a.dim(1);
  std::vector<T> out(a.size());
  detail::MutMap<T>(out.data(), n, m) = detail::ConstMap<T>(a.ptr(), m, n).transpose();
  return detail::finish<T>(detail::common_tape<T>({&a}), {n, m}, std::move(out),
                           [a, m, n](Tape<T>& t, std::span<const T> g) {
                             if (T* ga = t.grad_ptr(a)) {
                               detail::MutMap<T>(ga, m, n) += detail::ConstMap<T>(g.data(), n, m).transpose();
                             }
                           });
}

/// [m x p] ++ [m x q] -> [m x (p+q)]
template <typename T>
Array<T> concat_cols(const Array<T>& a, const Array<T>& b) {
  detail::require_rank(a.shape(), 2, "concat_cols");
  detail::require_rank(b.shape(), 2, "concat_cols");
  if (a.dim(0) != b.dim(0)) {
    throw DimensionError("concat_cols: row mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  const auto m = a.dim(0), p = a.dim(1), q = b.dim(1);
  std::vector<T> out(m * (p + q));
  for (std::size_t r = 0; r < m; ++r) {
    std::copy_n(a.ptr() + r * p, p, out.data() + r * (p + q));
    std::copy_n(b.ptr() + r * q, q, out.data() + r * (p + q) + p);
  }
  return detail::finish<T>(detail::common_tape<T>({&a, &b}), {m, p + q}, std::move(out),
                           [a, b, m, p, q](Tape<T>& t, std::span<const T> g) {
                             if (T* ga = t.grad_ptr(a)) {
                               for (std::size_t r = 0; r < m; ++r)
                                 for (std::size_t c = 0; c < p; ++c) ga[r * p + c] += g[r * (p + q) + c];
                             }
                             if (T* gb = t.grad_ptr(b)) {
                               for (std::size_t r = 0; r < m; ++r)
                                 for (std::size_t c = 0; c < q; ++c) gb[r * q + c] += g[r * (p + q) + p + c];
                             }
                           });
}

/// Columns [begin, end) of an [m x n] array.
template <typename T>
Array<T> slice_cols(const Array<T>& a, std::size_t begin, std::size_t end) {
  detail::require_rank(a.shape(), 2, "slice_cols");
  const auto m = a.dim(0), n = a.dim(1);
  if (begin >= end || end > n) throw DimensionError("slice_cols: bad range for " + to_string(a.shape()));
  const auto w = end - begin;
  std::vector<T> out(m * w);
  for (std::size_t r = 0; r < m; ++r) std::copy_n(a.ptr() + r * n + begin, w, out.data() + r * w);
  return detail::finish<T>(detail::common_tape<T>({&a}), {m, w}, std::move(out),
                           [a, m, n, begin, w](Tape<T>& t, std::span<const T> g) {
                             if (T* ga = t.grad_ptr(a)) {
                               for (std::size_t r = 0; r < m; ++r)
                                 for (std::size_t c = 0; c < w; ++c) ga[r * n + begin + c] += g[r * w + c];
                             }
                           });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Array<T> add(const Array<T>& a, const Array<T>& b) {
  detail::require_same(a.shape(), b.shape(), "add");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::finish<T>(detail::common_tape<T>({&a, &b}), a.shape(), std::move(out),
                           [a, b](Tape<T>& t, std::span<const T> g) {
                             t.accumulate(a, g);
                             t.accumulate(b, g);
                           });
}

template <typename T>
Array<T> sub(const Array<T>& a, const Array<T>& b) {
  detail::require_same(a.shape(), b.shape(), "sub");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::finish<T>(detail::common_tape<T>({&a, &b}), a.shape(), std::move(out),
                           [a, b](Tape<T>& t, std::span<const T> g) {
                             t.accumulate(a, g);
                             if (T* gb = t.grad_ptr(b)) {
                               for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                             }
                           });
}

template <typename T>
Array<T> mul(const Array<T>& a, const Array<T>& b) {
  detail::require_same(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::finish<T>(detail::common_tape<T>({&a, &b}), a.shape(), std::move(out),
                           [a, b](Tape<T>& t, std::span<const T> g) {
                             if (T* ga = t.grad_ptr(a)) {
                               for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
                             }
                             if (T* gb = t.grad_ptr(b)) {
                               for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
                             }
                           });
}

template <typename T>
Array<T> scale(const Array<T>& a, T s) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
  return detail::finish<T>(detail::common_tape<T>({&a}), a.shape(), std::move(out),
                           [a, s](Tape<T>& t, std::span<const T> g) {
                             if (T* ga = t.grad_ptr(a)) {
                               for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
                             }
                           });
}

/// Adds `row` (extent c) to every slice along the last axis of `a`.
template <typename T>
Array<T> add_row(const Array<T>& a, const Array<T>& row) {
  const auto c = a.shape().back();
  if (row.size() != c) {
    throw DimensionError("add_row: " + to_string(row.shape()) + " does not match last axis of " +
                         to_string(a.shape()));
  }
  const auto m = a.size() / c;
  std::vector<T> out(a.size());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t k = 0; k < c; ++k) out[r * c + k] = a[r * c + k] + row[k];
  return detail::finish<T>(detail::common_tape<T>({&a, &row}), a.shape(), std::move(out),
                           [a, row, m, c](Tape<T>& t, std::span<const T> g) {
                             t.accumulate(a, g);
                             if (T* gr = t.grad_ptr(row)) {
                               for (std::size_t r = 0; r < m; ++r)
                                 for (std::size_t k = 0; k < c; ++k) gr[k] += g[r * c + k];
                             }
                           });
}

/// Divides row r of an [m x n] array by col[r].
template <typename T>
Array<T> div_col(const Array<T>& a, const Array<T>& col) {
  detail::require_rank(a.shape(), 2, "div_col");
  const auto m = a.dim(0), n = a.dim(1);
  if (col.size() != m) throw DimensionError("div_col: divisor " + to_string(col.shape()) + " vs " + to_string(a.shape()));
  for (std::size_t r = 0; r < m; ++r) {
    if (col[r] == T(0)) throw NumericError("div_col: zero divisor at row " + std::to_string(r));
  }
  std::vector<T> out(a.size());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t k = 0; k < n; ++k) out[r * n + k] = a[r * n + k] / col[r];
  return detail::finish<T>(detail::common_tape<T>({&a, &col}), a.shape(), std::move(out),
                           [a, col, m, n](Tape<T>& t, std::span<const T> g) {
                             T* ga = t.grad_ptr(a);
                             T* gc = t.grad_ptr(col);
                             for (std::size_t r = 0; r < m; ++r) {
                               const T inv = T(1) / col[r];
                               T acc = 0;
                               for (std::size_t k = 0; k < n; ++k) {
                                 if (ga) ga[r * n + k] += g[r * n + k] * inv;
                                 acc += g[r * n + k] * a[r * n + k];
                               }
                               if (gc) gc[r] -= acc * inv * inv;
                             }
                           });
}

template <typename T>
Array<T> sum(const Array<T>& a) {
  T s = 0;
  for (auto v : a.data()) s += v;
  return detail::finish<T>(detail::common_tape<T>({&a}), {1}, {s}, [a](Tape<T>& t, std::span<const T> g) {
    if (T* ga = t.grad_ptr(a)) {
      for (std::size_t i = 0; i < a.size(); ++i) ga[i] += g[0];
    }
  });
}

template <typename T>
Array<T> mean(const Array<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

/// Column sums of an [m x n] array -> [1 x n].
template <typename T>
Array<T> sum_rows(const Array<T>& a) {
  detail::require_rank(a.shape(), 2, "sum_rows");
  const auto m = a.dim(0), n = a.dim(1);
  std::vector<T> out(n, T(0));
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t k = 0; k < n; ++k) out[k] += a[r * n + k];
  return detail::finish<T>(detail::common_tape<T>({&a}), {1, n}, std::move(out),
                           [a, m, n](Tape<T>& t, std::span<const T> g) {
                             if (T* ga = t.grad_ptr(a)) {
                               for (std::size_t r = 0; r < m; ++r)
                                 for (std::size_t k = 0; k < n; ++k) ga[r * n + k] += g[k];
                             }
                           });
}

/// x * sigmoid(x); smooth everywhere.
template <typename T>
Array<T> silu(const Array<T>& a) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] / (T(1) + std::exp(-a[i]));
  return detail::finish<T>(detail::common_tape<T>({&a}), a.shape(), std::move(out),
                           [a](Tape<T>& t, std::span<const T> g) {
                             if (T* ga = t.grad_ptr(a)) {
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                 const T s = T(1) / (T(1) + std::exp(-a[i]));
                                 ga[i] += g[i] * s * (T(1) + a[i] * (T(1) - s));
                               }
                             }
                           });
}

/// elu(x) + 1, the strictly positive kernel feature map of linear attention.
template <typename T>
Array<T> elu_plus_one(const Array<T>& a) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > T(0) ? a[i] + T(1) : std::exp(a[i]);
  return detail::finish<T>(detail::common_tape<T>({&a}), a.shape(), std::move(out),
                           [a](Tape<T>& t, std::span<const T> g) {
                             if (T* ga = t.grad_ptr(a)) {
                               for (std::size_t i = 0; i < g.size(); ++i)
                                 ga[i] += g[i] * (a[i] > T(0) ? T(1) : std::exp(a[i]));
                             }
                           });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Array<T> matmul(const Array<T>& a, const Array<T>& b) {
  detail::require_rank(a.shape(), 2, "matmul");
  detail::require_rank(b.shape(), 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner extents differ, " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n);
  const detail::ConstMap<T> A(a.ptr(), m, k), B(b.ptr(), k, n);
  parallel_for(m, detail::kMatmulGrain, [&](std::size_t r0, std::size_t r1) {
    detail::MutMap<T>(out.data() + r0 * n, r1 - r0, n).noalias() = A.middleRows(r0, r1 - r0) * B;
  });
  return detail::finish<T>(
      detail::common_tape<T>({&a, &b}), {m, n}, std::move(out), [a, b, m, k, n](Tape<T>& t, std::span<const T> g) {
        const detail::ConstMap<T> A(a.ptr(), m, k), B(b.ptr(), k, n), G(g.data(), m, n);
        if (T* ga = t.grad_ptr(a)) {
          detail::MutMap<T> GA(ga, m, k);
          parallel_for(m, detail::kMatmulGrain, [&](std::size_t r0, std::size_t r1) {
            GA.middleRows(r0, r1 - r0).noalias() += G.middleRows(r0, r1 - r0) * B.transpose();
          });
        }
        if (T* gb = t.grad_ptr(b)) {
          detail::MutMap<T> GB(gb, k, n);
          parallel_for(k, detail::kMatmulGrain, [&](std::size_t r0, std::size_t r1) {
            GB.middleRows(r0, r1 - r0).noalias() += A.middleCols(r0, r1 - r0).transpose() * G;
          });
        }
      });
}

// ---------------------------------------------------------------------------
// Normalization

/// Softmax of x / temperature along `axis`, stabilized by max subtraction.
template <typename T>
Array<T> softmax(const Array<T>& x, std::size_t axis, T temperature = T(1)) {
  if (!(temperature > T(0))) throw DomainError("softmax: temperature must be positive");
  if (axis >= x.rank()) throw DimensionError("softmax: axis out of range for " + to_string(x.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const auto len = x.dim(axis);
  std::vector<T> y(x.size());
  const T inv_t = T(1) / temperature;
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t l = 0; l < len; ++l) mx = std::max(mx, x[base + l * inner]);
      T z = 0;
      for (std::size_t l = 0; l < len; ++l) {
        const T e = std::exp((x[base + l * inner] - mx) * inv_t);
        y[base + l * inner] = e;
        z += e;
      }
      for (std::size_t l = 0; l < len; ++l) y[base + l * inner] /= z;
    }
  }
  Array<T> probs(x.shape(), std::move(y));
  auto* tape = detail::common_tape<T>({&x});
  if (!tape) return probs;
  return tape->record(probs, [x, probs, outer, inner, len, inv_t](Tape<T>& t, std::span<const T> g) {
    T* gx = t.grad_ptr(x);
    if (!gx) return;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        T dot = 0;
        for (std::size_t l = 0; l < len; ++l) dot += g[base + l * inner] * probs[base + l * inner];
        for (std::size_t l = 0; l < len; ++l) {
          const auto idx = base + l * inner;
          gx[idx] += probs[idx] * (g[idx] - dot) * inv_t;
        }
      }
    }
  });
}

/// Per-token normalization over the last axis followed by an affine map.
template <typename T>
Array<T> layer_norm(const Array<T>& x, const Array<T>& scale_, const Array<T>& bias, T eps = T(1e-5)) {
  const auto c = x.shape().back();
  if (scale_.size() != c || bias.size() != c) {
    throw DimensionError("layer_norm: scale/bias " + to_string(scale_.shape()) + "/" + to_string(bias.shape()) +
                         " do not match last axis of " + to_string(x.shape()));
  }
  const auto m = x.size() / c;
  std::vector<T> xhat(x.size()), inv_std(m), y(x.size());
  for (std::size_t r = 0; r < m; ++r) {
    const T* row = x.ptr() + r * c;
    T mu = 0;
    for (std::size_t k = 0; k < c; ++k) mu += row[k];
    mu /= static_cast<T>(c);
    T var = 0;
    for (std::size_t k = 0; k < c; ++k) var += (row[k] - mu) * (row[k] - mu);
    var /= static_cast<T>(c);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t k = 0; k < c; ++k) {
      xhat[r * c + k] = (row[k] - mu) * inv_std[r];
      y[r * c + k] = xhat[r * c + k] * scale_[k] + bias[k];
    }
  }
  return detail::finish<T>(
      detail::common_tape<T>({&x, &scale_, &bias}), x.shape(), std::move(y),
      [x, scale_, bias, m, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& t,
                                                                                    std::span<const T> g) {
        T* gx = t.grad_ptr(x);
        T* gs = t.grad_ptr(scale_);
        T* gb = t.grad_ptr(bias);
        const T inv_c = T(1) / static_cast<T>(c);
        for (std::size_t r = 0; r < m; ++r) {
          T mean_g = 0, mean_gx = 0;
          for (std::size_t k = 0; k < c; ++k) {
            const T gh = g[r * c + k] * scale_[k];
            mean_g += gh;
            mean_gx += gh * xhat[r * c + k];
            if (gs) gs[k] += g[r * c + k] * xhat[r * c + k];
            if (gb) gb[k] += g[r * c + k];
          }
          if (!gx) continue;
          mean_g *= inv_c;
          mean_gx *= inv_c;
          for (std::size_t k = 0; k < c; ++k) {
            const T gh = g[r * c + k] * scale_[k];
            gx[r * c + k] += inv_std[r] * (gh - mean_g - xhat[r * c + k] * mean_gx);
          }
        }
      });
}

/// Scales each last-axis vector to unit Euclidean norm; zero vectors stay zero.
template <typename T>
Array<T> l2_normalize(const Array<T>& x) {
  constexpr T kFloor = T(1e-12);
  const auto c = x.shape().back();
  const auto m = x.size() / c;
  std::vector<T> y(x.size()), norm(m);
  for (std::size_t r = 0; r < m; ++r) {
    T s = 0;
    for (std::size_t k = 0; k < c; ++k) s += x[r * c + k] * x[r * c + k];
    norm[r] = std::max(std::sqrt(s), kFloor);
    for (std::size_t k = 0; k < c; ++k) y[r * c + k] = x[r * c + k] / norm[r];
  }
  Array<T> out(x.shape(), std::move(y));
  auto* tape = detail::common_tape<T>({&x});
  if (!tape) return out;
  return tape->record(out, [x, out, m, c, norm = std::move(norm)](Tape<T>& t, std::span<const T> g) {
    T* gx = t.grad_ptr(x);
    if (!gx) return;
    for (std::size_t r = 0; r < m; ++r) {
      if (norm[r] <= kFloor) {
        for (std::size_t k = 0; k < c; ++k) gx[r * c + k] += g[r * c + k] / kFloor;
        continue;
      }
      T dot = 0;
      for (std::size_t k = 0; k < c; ++k) dot += g[r * c + k] * out[r * c + k];
      for (std::size_t k = 0; k < c; ++k) gx[r * c + k] += (g[r * c + k] - out[r * c + k] * dot) / norm[r];
    }
  });
}

// ---------------------------------------------------------------------------
// Spatial ops. Images are [h x w x c], row-major, pixel (x, y) at index y*w+x.

/// Cross-correlation with zero "same" padding: output extent ceil(in/stride).
template <typename T>
Array<T> conv2d(const Array<T>& x, const Array<T>& kernel, std::size_t stride = 1) {
  detail::require_rank(x.shape(), 3, "conv2d");
  detail::require_rank(kernel.shape(), 4, "conv2d kernel");
  const auto h = x.dim(0), w = x.dim(1), cin = x.dim(2);
  const auto kh = kernel.dim(0), kw = kernel.dim(1), cout = kernel.dim(3);
  if (kh % 2 == 0 || kw % 2 == 0) {
    throw ConfigError("conv2d: kernel extents must be odd, got " + to_string(kernel.shape()));
  }
  if (kernel.dim(2) != cin) {
    throw DimensionError("conv2d: kernel " + to_string(kernel.shape()) + " vs input " + to_string(x.shape()));
  }
  if (stride == 0) throw ConfigError("conv2d: stride must be positive");
  const auto oh = (h + stride - 1) / stride, ow = (w + stride - 1) / stride;
  const auto pad_h = static_cast<long>(std::max<long>(static_cast<long>((oh - 1) * stride + kh) - static_cast<long>(h), 0) / 2);
  const auto pad_w = static_cast<long>(std::max<long>(static_cast<long>((ow - 1) * stride + kw) - static_cast<long>(w), 0) / 2);
  const auto patch = kh * kw * cin;
  // im2col: one row per output pixel.
  auto cols = std::make_shared<std::vector<T>>(oh * ow * patch, T(0));
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      T* dst = cols->data() + (oy * ow + ox) * patch;
      for (std::size_t a = 0; a < kh; ++a) {
        const long iy = static_cast<long>(oy * stride + a) - pad_h;
        if (iy < 0 || iy >= static_cast<long>(h)) continue;
        for (std::size_t b = 0; b < kw; ++b) {
          const long ix = static_cast<long>(ox * stride + b) - pad_w;
          if (ix < 0 || ix >= static_cast<long>(w)) continue;
          std::copy_n(x.ptr() + (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * cin, cin,
                      dst + (a * kw + b) * cin);
        }
      }
    }
  }
  std::vector<T> out(oh * ow * cout);
  const detail::ConstMap<T> C(cols->data(), oh * ow, patch), K(kernel.ptr(), patch, cout);
  parallel_for(oh * ow, detail::kMatmulGrain, [&](std::size_t r0, std::size_t r1) {
    detail::MutMap<T>(out.data() + r0 * cout, r1 - r0, cout).noalias() = C.middleRows(r0, r1 - r0) * K;
  });
  return detail::finish<T>(
      detail::common_tape<T>({&x, &kernel}), {oh, ow, cout}, std::move(out),
      [=](Tape<T>& t, std::span<const T> g) {
        const detail::ConstMap<T> C(cols->data(), oh * ow, patch), K(kernel.ptr(), patch, cout),
            G(g.data(), oh * ow, cout);
        if (T* gk = t.grad_ptr(kernel)) detail::MutMap<T>(gk, patch, cout).noalias() += C.transpose() * G;
        T* gx = t.grad_ptr(x);
        if (!gx) return;
        detail::RowMat<T> gcols = G * K.transpose();
        for (std::size_t oy = 0; oy < oh; ++oy) {
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const T* src = gcols.data() + (oy * ow + ox) * patch;
            for (std::size_t a = 0; a < kh; ++a) {
              const long iy = static_cast<long>(oy * stride + a) - pad_h;
              if (iy < 0 || iy >= static_cast<long>(h)) continue;
              for (std::size_t b = 0; b < kw; ++b) {
                const long ix = static_cast<long>(ox * stride + b) - pad_w;
                if (ix < 0 || ix >= static_cast<long>(w)) continue;
                T* dst = gx + (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * cin;
                const T* s = src + (a * kw + b) * cin;
                for (std::size_t k = 0; k < cin; ++k) dst[k] += s[k];
              }
            }
          }
        }
      });
}

/// Bilinear resize of an [h x w x c] array, align-corners-false convention.
template <typename T>
Array<T> bilinear_resize(const Array<T>& x, std::size_t out_h, std::size_t out_w) {
  detail::require_rank(x.shape(), 3, "bilinear_resize");
  if (out_h == 0 || out_w == 0) throw DimensionError("bilinear_resize: output extents must be >= 1");
  const auto h = x.dim(0), w = x.dim(1), c = x.dim(2);
  if (h == out_h && w == out_w) return reshape(x, x.shape());
  auto ty = detail::resize_taps(h, out_h);
  auto tx = detail::resize_taps(w, out_w);
  std::vector<T> out(out_h * out_w * c, T(0));
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    const auto& vy = ty[oy];
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const auto& vx = tx[ox];
      const T w00 = T((1 - vy.w) * (1 - vx.w)), w01 = T((1 - vy.w) * vx.w), w10 = T(vy.w * (1 - vx.w)),
              w11 = T(vy.w * vx.w);
      const T* p00 = x.ptr() + (vy.lo * w + vx.lo) * c;
      const T* p01 = x.ptr() + (vy.lo * w + vx.hi) * c;
      const T* p10 = x.ptr() + (vy.hi * w + vx.lo) * c;
      const T* p11 = x.ptr() + (vy.hi * w + vx.hi) * c;
      T* dst = out.data() + (oy * out_w + ox) * c;
      for (std::size_t k = 0; k < c; ++k) dst[k] = w00 * p00[k] + w01 * p01[k] + w10 * p10[k] + w11 * p11[k];
    }
  }
  return detail::finish<T>(detail::common_tape<T>({&x}), {out_h, out_w, c}, std::move(out),
                           [=](Tape<T>& t, std::span<const T> g) {
                             T* gx = t.grad_ptr(x);
                             if (!gx) return;
                             for (std::size_t oy = 0; oy < out_h; ++oy) {
                               const auto& vy = ty[oy];
                               for (std::size_t ox = 0; ox < out_w; ++ox) {
                                 const auto& vx = tx[ox];
                                 const T w00 = T((1 - vy.w) * (1 - vx.w)), w01 = T((1 - vy.w) * vx.w),
                                         w10 = T(vy.w * (1 - vx.w)), w11 = T(vy.w * vx.w);
                                 const T* src = g.data() + (oy * out_w + ox) * c;
                                 T* g00 = gx + (vy.lo * w + vx.lo) * c;
                                 T* g01 = gx + (vy.lo * w + vx.hi) * c;
                                 T* g10 = gx + (vy.hi * w + vx.lo) * c;
                                 T* g11 = gx + (vy.hi * w + vx.hi) * c;
                                 for (std::size_t k = 0; k < c; ++k) {
                                   g00[k] += w00 * src[k];
                                   g01[k] += w01 * src[k];
                                   g10[k] += w10 * src[k];
                                   g11[k] += w11 * src[k];
                                 }
                               }
                             }
                           });
}

template <typename T>
struct Sampled {
  Array<T> values;                  // [n x c]
  std::vector<std::uint8_t> valid;  // 1 where the coordinate was inside the grid
};

/// Samples x at continuous (x, y) pixel coordinates given as rows of an
/// [n x 2] array. Out-of-range coordinates are clamped to the border and
/// flagged invalid. Differentiable with respect to `x` only.
template <typename T>
Sampled<T> bilinear_sample(const Array<T>& x, const Array<T>& coords) {
  detail::require_rank(x.shape(), 3, "bilinear_sample");
  if (coords.rank() != 2 || coords.dim(1) != 2) {
    throw DimensionError("bilinear_sample: coords must be [n x 2], got " + to_string(coords.shape()));
  }
  const auto h = x.dim(0), w = x.dim(1), c = x.dim(2), n = coords.dim(0);
  struct Corner {
    std::size_t i00, i01, i10, i11;
    T w00, w01, w10, w11;
  };
  std::vector<Corner> corners(n);
  std::vector<std::uint8_t> valid(n);
  std::vector<T> out(n * c);
  const T max_x = static_cast<T>(w - 1), max_y = static_cast<T>(h - 1);
  for (std::size_t i = 0; i < n; ++i) {
    const T px = coords[2 * i], py = coords[2 * i + 1];
    valid[i] = px >= T(0) && px <= max_x && py >= T(0) && py <= max_y;
    const T cx = std::clamp(px, T(0), max_x), cy = std::clamp(py, T(0), max_y);
    const auto x0 = static_cast<std::size_t>(std::floor(cx)), y0 = static_cast<std::size_t>(std::floor(cy));
    const auto x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
    const T fx = cx - static_cast<T>(x0), fy = cy - static_cast<T>(y0);
    Corner k{(y0 * w + x0) * c, (y0 * w + x1) * c, (y1 * w + x0) * c, (y1 * w + x1) * c,
             (1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx};
    for (std::size_t ch = 0; ch < c; ++ch) {
      out[i * c + ch] = k.w00 * x[k.i00 + ch] + k.w01 * x[k.i01 + ch] + k.w10 * x[k.i10 + ch] + k.w11 * x[k.i11 + ch];
    }
    corners[i] = k;
  }
  auto values = detail::finish<T>(detail::common_tape<T>({&x}), {n, c}, std::move(out),
                                  [x, c, corners = std::move(corners)](Tape<T>& t, std::span<const T> g) {
                                    T* gx = t.grad_ptr(x);
                                    if (!gx) return;
                                    for (std::size_t i = 0; i < corners.size(); ++i) {
                                      const auto& k = corners[i];
                                      for (std::size_t ch = 0; ch < c; ++ch) {
                                        const T gi = g[i * c + ch];
                                        gx[k.i00 + ch] += k.w00 * gi;
                                        gx[k.i01 + ch] += k.w01 * gi;
                                        gx[k.i10 + ch] += k.w10 * gi;
                                        gx[k.i11 + ch] += k.w11 * gi;
                                      }
                                    }
                                  });
  return {std::move(values), std::move(valid)};
}

/// Single-channel 2D correlation over one spatial pair of a rank-4 array
/// [p x q x r x s]. With `leading` the kernel slides over (p, q) and (r, s)
/// acts as a batch; otherwise over (r, s) with (p, q) as the batch. Zero
/// "same" padding, odd kernel extents.
template <typename T>
Array<T> plane_conv(const Array<T>& x, const Array<T>& kernel, bool leading) {
  detail::require_rank(x.shape(), 4, "plane_conv");
  detail::require_rank(kernel.shape(), 2, "plane_conv kernel");
  const auto kh = kernel.dim(0), kw = kernel.dim(1);
  if (kh % 2 == 0 || kw % 2 == 0) throw ConfigError("plane_conv: kernel extents must be odd");
  const auto P = x.dim(0), Q = x.dim(1), R = x.dim(2), S = x.dim(3);
  const long rh = static_cast<long>(kh / 2), rw = static_cast<long>(kw / 2);
  std::vector<T> out(x.size(), T(0));

  // Visits every (output offset, input offset, tap) triple of the plane
  // convolution; `rows` is the contiguous run length shared by all three.
  auto for_each_tap = [=](auto&& fn) {
    if (leading) {
      const std::size_t run = R * S;
      for (std::size_t p = 0; p < P; ++p)
        for (std::size_t q = 0; q < Q; ++q)
          for (std::size_t a = 0; a < kh; ++a) {
            const long ip = static_cast<long>(p) + static_cast<long>(a) - rh;
            if (ip < 0 || ip >= static_cast<long>(P)) continue;
            for (std::size_t b = 0; b < kw; ++b) {
              const long iq = static_cast<long>(q) + static_cast<long>(b) - rw;
              if (iq < 0 || iq >= static_cast<long>(Q)) continue;
              fn((p * Q + q) * run, (static_cast<std::size_t>(ip) * Q + static_cast<std::size_t>(iq)) * run,
                 a * kw + b, run);
            }
          }
    } else {
      for (std::size_t blk = 0; blk < P * Q; ++blk)
        for (std::size_t r = 0; r < R; ++r)
          for (std::size_t a = 0; a < kh; ++a) {
            const long ir = static_cast<long>(r) + static_cast<long>(a) - rh;
            if (ir < 0 || ir >= static_cast<long>(R)) continue;
            for (std::size_t b = 0; b < kw; ++b) {
              // Column range [s_lo, s_hi) whose shifted source stays in bounds.
              const long shift = static_cast<long>(b) - rw;
              const long s_lo = std::max<long>(0, -shift);
              const long s_hi = std::min<long>(static_cast<long>(S), static_cast<long>(S) - shift);
              if (s_lo >= s_hi) continue;
              const std::size_t o = (blk * R + r) * S + static_cast<std::size_t>(s_lo);
              const std::size_t i = (blk * R + static_cast<std::size_t>(ir)) * S + static_cast<std::size_t>(s_lo + shift);
              fn(o, i, a * kw + b, static_cast<std::size_t>(s_hi - s_lo));
            }
          }
    }
  };

  for_each_tap([&](std::size_t o, std::size_t i, std::size_t tap, std::size_t run) {
    const T kv = kernel[tap];
    const T* src = x.ptr() + i;
    T* dst = out.data() + o;
    for (std::size_t e = 0; e < run; ++e) dst[e] += kv * src[e];
  });

  return detail::finish<T>(detail::common_tape<T>({&x, &kernel}), x.shape(), std::move(out),
                           [x, kernel, for_each_tap](Tape<T>& t, std::span<const T> g) {
                             T* gx = t.grad_ptr(x);
                             T* gk = t.grad_ptr(kernel);
                             for_each_tap([&](std::size_t o, std::size_t i, std::size_t tap, std::size_t run) {
                               const T* go = g.data() + o;
                               if (gx) {
                                 const T kv = kernel[tap];
                                 T* dst = gx + i;
                                 for (std::size_t e = 0; e < run; ++e) dst[e] += kv * go[e];
                               }
                               if (gk) {
                                 const T* src = x.ptr() + i;
                                 T acc = 0;
                                 for (std::size_t e = 0; e < run; ++e) acc += go[e] * src[e];
                                 gk[tap] += acc;
                               }
                             });
                           });
}

// ---------------------------------------------------------------------------
// Losses

/// Mean Euclidean distance between two [h x w x 2] flow grids over pixels
/// where mask != 0. `target` is treated as a constant.
template <typename T>
Array<T> masked_epe(const Array<T>& pred, const Array<T>& target, std::span<const std::uint8_t> mask) {
  detail::require_same(pred.shape(), target.shape(), "masked_epe");
  if (pred.shape().back() != 2) throw DimensionError("masked_epe: last axis must be 2");
  const auto n = pred.size() / 2;
  if (mask.size() != n) throw DimensionError("masked_epe: mask size mismatch");
  std::size_t count = 0;
  T total = 0;
  std::vector<T> dist(n, T(0));
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const T dx = pred[2 * i] - target[2 * i], dy = pred[2 * i + 1] - target[2 * i + 1];
    dist[i] = std::sqrt(dx * dx + dy * dy);
    total += dist[i];
    ++count;
  }
  if (count == 0) throw ContractError("masked_epe: no valid pixels");
  const T inv = T(1) / static_cast<T>(count);
  std::vector<std::uint8_t> keep(mask.begin(), mask.end());
  return detail::finish<T>(detail::common_tape<T>({&pred}), {1}, {total * inv},
                           [pred, target, keep = std::move(keep), dist = std::move(dist), inv](
                               Tape<T>& t, std::span<const T> g) {
                             T* gp = t.grad_ptr(pred);
                             if (!gp) return;
                             for (std::size_t i = 0; i < keep.size(); ++i) {
                               if (!keep[i] || dist[i] == T(0)) continue;
                               const T s = g[0] * inv / dist[i];
                               gp[2 * i] += s * (pred[2 * i] - target[2 * i]);
                               gp[2 * i + 1] += s * (pred[2 * i + 1] - target[2 * i + 1]);
                             }
                           });
}

}  // namespace ufc
