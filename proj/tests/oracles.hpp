#pragma once

// Brute-force reference implementations. Everything here works on plain
// vectors with explicit loops and shares no code with the library ops.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "ufc/numerics/array.hpp"

namespace ufc::oracle {

struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> v;
  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), v(r * c, fill) {}
  double& operator()(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
};

/// Leading axis becomes rows, everything else is flattened into columns.
inline Mat from(const Array<double>& a) {
  Mat m(a.dim(0), a.size() / a.dim(0));
  for (std::size_t i = 0; i < a.size(); ++i) m.v[i] = a[i];
  return m;
}

inline double max_diff(const Mat& a, const Array<double>& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.v.size(); ++i) d = std::max(d, std::abs(a.v[i] - b[i]));
  return d;
}

inline Mat mm(const Mat& a, const Mat& b) {
  Mat out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < b.cols; ++j) {
      double s = 0;
      for (std::size_t t = 0; t < a.cols; ++t) s += a(i, t) * b(t, j);
      out(i, j) = s;
    }
  return out;
}

inline Mat tr(const Mat& a) {
  Mat out(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) out(j, i) = a(i, j);
  return out;
}

inline Mat plus(const Mat& a, const Mat& b) {
  Mat out = a;
  for (std::size_t i = 0; i < a.v.size(); ++i) out.v[i] += b.v[i];
  return out;
}

inline Mat hcat(const Mat& a, const Mat& b) {
  Mat out(a.rows, a.cols + b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = 0; j < a.cols; ++j) out(i, j) = a(i, j);
    for (std::size_t j = 0; j < b.cols; ++j) out(i, a.cols + j) = b(i, j);
  }
  return out;
}

inline Mat layer_norm(const Mat& x, const Mat& s, const Mat& b, double eps = 1e-5) {
  Mat out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    double mu = 0, var = 0;
    for (std::size_t j = 0; j < x.cols; ++j) mu += x(i, j);
    mu /= x.cols;
    for (std::size_t j = 0; j < x.cols; ++j) var += (x(i, j) - mu) * (x(i, j) - mu);
    var /= x.cols;
    for (std::size_t j = 0; j < x.cols; ++j) out(i, j) = (x(i, j) - mu) / std::sqrt(var + eps) * s.v[j] + b.v[j];
  }
  return out;
}

/// Row-wise softmax of x / temperature.
inline Mat softmax_rows(const Mat& x, double temperature) {
  Mat out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    double mx = -1e300, z = 0;
    for (std::size_t j = 0; j < x.cols; ++j) mx = std::max(mx, x(i, j) / temperature);
    for (std::size_t j = 0; j < x.cols; ++j) z += std::exp(x(i, j) / temperature - mx);
    for (std::size_t j = 0; j < x.cols; ++j) out(i, j) = std::exp(x(i, j) / temperature - mx) / z;
  }
  return out;
}

inline double elu1(double x) { return x > 0 ? x + 1 : std::exp(x); }
inline double silu(double x) { return x / (1 + std::exp(-x)); }

/// sum_j phi(q_i).phi(k_j) v_j / sum_j phi(q_i).phi(k_j), quadratic form.
inline Mat linear_attention(const Mat& q, const Mat& k, const Mat& v) {
  Mat out(q.rows, v.cols);
  for (std::size_t i = 0; i < q.rows; ++i) {
    double z = 0;
    for (std::size_t j = 0; j < k.rows; ++j) {
      double w = 0;
      for (std::size_t t = 0; t < q.cols; ++t) w += elu1(q(i, t)) * elu1(k(j, t));
      z += w;
      for (std::size_t c = 0; c < v.cols; ++c) out(i, c) += w * v(j, c);
    }
    for (std::size_t c = 0; c < v.cols; ++c) out(i, c) /= z;
  }
  return out;
}

inline Mat softmax_attention(const Mat& q, const Mat& k, const Mat& v) {
  return mm(softmax_rows(mm(q, tr(k)), std::sqrt(double(q.cols))), v);
}

using Params = std::map<std::string, Mat>;

inline Params params_from(const std::map<std::string, Array<double>>& all) {
  Params p;
  for (const auto& [name, a] : all) {
    Mat m(a.rank() == 1 ? 1 : a.dim(0), a.rank() == 1 ? a.dim(0) : a.size() / a.dim(0));
    for (std::size_t i = 0; i < a.size(); ++i) m.v[i] = a[i];
    p[name] = m;
  }
  return p;
}

inline Mat mlp_residual(const Mat& x, const Params& p, const std::string& ln, const std::string& mlp) {
  const auto n = layer_norm(x, p.at(ln + ".s"), p.at(ln + ".b"));
  Mat h = mm(n, p.at(mlp + ".w1"));
  for (std::size_t i = 0; i < h.rows; ++i)
    for (std::size_t j = 0; j < h.cols; ++j) h(i, j) = silu(h(i, j) + p.at(mlp + ".b1").v[j]);
  Mat y = mm(h, p.at(mlp + ".w2"));
  for (std::size_t i = 0; i < y.rows; ++i)
    for (std::size_t j = 0; j < y.cols; ++j) y(i, j) += x(i, j) + p.at(mlp + ".b2").v[j];
  return y;
}

/// One side of integrative self-attention with explicit attention weights.
/// Returns features and cost rows.
inline std::pair<Mat, Mat> integrative_side(const Mat& d, const Mat& cost_rows, const Params& p,
                                            const std::string& prefix, bool softmax_kind, const Mat* pos) {
  const auto dn = layer_norm(d, p.at(prefix + "ln_d.s"), p.at(prefix + "ln_d.b"));
  const auto cn = layer_norm(cost_rows, p.at(prefix + "ln_c.s"), p.at(prefix + "ln_c.b"));
  const auto x = hcat(pos ? plus(dn, *pos) : dn, cn);
  const auto q = mm(x, p.at(prefix + "pq")), k = mm(x, p.at(prefix + "pk"));
  const auto vd = mm(dn, p.at(prefix + "pvd")), vc = mm(cn, p.at(prefix + "pvc"));
  // Explicit n x n attention matrix shared by both value streams.
  Mat a(q.rows, k.rows);
  for (std::size_t i = 0; i < q.rows; ++i) {
    double z = 0;
    for (std::size_t j = 0; j < k.rows; ++j) {
      double s = 0;
      for (std::size_t t = 0; t < q.cols; ++t) s += softmax_kind ? q(i, t) * k(j, t) : elu1(q(i, t)) * elu1(k(j, t));
      a(i, j) = softmax_kind ? s / std::sqrt(double(q.cols)) : s;
    }
    if (softmax_kind) {
      double mx = -1e300;
      for (std::size_t j = 0; j < k.rows; ++j) mx = std::max(mx, a(i, j));
      for (std::size_t j = 0; j < k.rows; ++j) z += (a(i, j) = std::exp(a(i, j) - mx));
    } else {
      for (std::size_t j = 0; j < k.rows; ++j) z += a(i, j);
    }
    for (std::size_t j = 0; j < k.rows; ++j) a(i, j) /= z;
  }
  const auto d1 = plus(d, mm(a, vd));
  return {mlp_residual(d1, p, prefix + "ln_d2", prefix + "mlp_d"), plus(cost_rows, mm(a, vc))};
}

/// 2D correlation of each plane of a [s,s,s,s] volume with a 3x3 kernel,
/// zero padded. `leading` selects the source plane.
inline Mat plane_conv(const Mat& c, std::size_t s, const Mat& k, bool leading) {
  Mat out(c.rows, c.cols);
  const long S = long(s);
  for (long a = 0; a < S; ++a)
    for (long b = 0; b < S; ++b)
      for (long y = 0; y < S; ++y)
        for (long x = 0; x < S; ++x) {
          double acc = 0;
          for (long dy = -1; dy <= 1; ++dy)
            for (long dx = -1; dx <= 1; ++dx) {
              const long yy = y + dy, xx = x + dx;
              if (yy < 0 || yy >= S || xx < 0 || xx >= S) continue;
              const double w = k.v[(dy + 1) * 3 + (dx + 1)];
              const long i = leading ? yy * S + xx : a * S + b;
              const long j = leading ? a * S + b : yy * S + xx;
              acc += w * c(i, j);
            }
          const long i = leading ? y * S + x : a * S + b;
          const long j = leading ? a * S + b : y * S + x;
          out(i, j) = acc;
        }
  return out;
}

/// Cross-attention with the convolved cost as attention logits, per pixel.
inline std::pair<Mat, Mat> cross_matching(const Mat& ds, const Mat& dt, const Mat& cost, std::size_t s,
                                          const Params& p, const std::string& prefix, double temperature) {
  const auto m = plane_conv(plane_conv(cost, s, p.at(prefix + "kx_src"), true), s, p.at(prefix + "kx_tgt"), false);
  const auto vs = mm(layer_norm(ds, p.at(prefix + "ln_x.s"), p.at(prefix + "ln_x.b")), p.at(prefix + "pvd"));
  const auto vt = mm(layer_norm(dt, p.at(prefix + "ln_x.s"), p.at(prefix + "ln_x.b")), p.at(prefix + "pvd"));
  const std::size_t n = s * s;
  Mat agg_t(n, ds.cols), agg_s(n, ds.cols);
  for (std::size_t j = 0; j < n; ++j) {
    double mx = -1e300, z = 0;
    for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, m(i, j) / temperature);
    for (std::size_t i = 0; i < n; ++i) z += std::exp(m(i, j) / temperature - mx);
    for (std::size_t i = 0; i < n; ++i) {
      const double w = std::exp(m(i, j) / temperature - mx) / z;
      for (std::size_t c = 0; c < ds.cols; ++c) agg_t(j, c) += w * vs(i, c);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -1e300, z = 0;
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, m(i, j) / temperature);
    for (std::size_t j = 0; j < n; ++j) z += std::exp(m(i, j) / temperature - mx);
    for (std::size_t j = 0; j < n; ++j) {
      const double w = std::exp(m(i, j) / temperature - mx) / z;
      for (std::size_t c = 0; c < ds.cols; ++c) agg_s(i, c) += w * vt(j, c);
    }
  }
  return {mlp_residual(plus(ds, agg_s), p, prefix + "ln_x2", prefix + "mlp_x"),
          mlp_residual(plus(dt, agg_t), p, prefix + "ln_x2", prefix + "mlp_x")};
}

/// C(i, j) = <D_s(i), D_t(j)> by explicit double loop; inputs are [n x c].
inline Mat pairwise_dots(const Mat& ds, const Mat& dt) {
  Mat out(ds.rows, dt.rows);
  for (std::size_t i = 0; i < ds.rows; ++i)
    for (std::size_t j = 0; j < dt.rows; ++j) {
      double s = 0;
      for (std::size_t t = 0; t < ds.cols; ++t) s += ds(i, t) * dt(j, t);
      out(i, j) = s;
    }
  return out;
}

/// Six nested loops with "same" zero padding derived independently.
inline Array<double> conv2d(const Array<double>& x, const Array<double>& k, std::size_t stride) {
  const long h = x.dim(0), w = x.dim(1), cin = x.dim(2);
  const long kh = k.dim(0), kw = k.dim(1), cout = k.dim(3);
  const long oh = (h + stride - 1) / stride, ow = (w + stride - 1) / stride;
  const long ph = std::max<long>((oh - 1) * stride + kh - h, 0) / 2;
  const long pw = std::max<long>((ow - 1) * stride + kw - w, 0) / 2;
  std::vector<double> out(oh * ow * cout, 0.0);
  for (long oy = 0; oy < oh; ++oy)
    for (long ox = 0; ox < ow; ++ox)
      for (long co = 0; co < cout; ++co)
        for (long a = 0; a < kh; ++a)
          for (long b = 0; b < kw; ++b)
            for (long ci = 0; ci < cin; ++ci) {
              const long iy = oy * long(stride) + a - ph, ix = ox * long(stride) + b - pw;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              out[(oy * ow + ox) * cout + co] += x.at(iy, ix, ci) * k.at(a, b, ci, co);
            }
  return Array<double>({std::size_t(oh), std::size_t(ow), std::size_t(cout)}, out);
}

}  // namespace ufc::oracle
