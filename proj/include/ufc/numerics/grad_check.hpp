#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "ufc/numerics/array.hpp"
#include "ufc/numerics/params.hpp"

namespace ufc {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

namespace detail {

inline void note_error(GradCheckReport& r, std::size_t input, std::size_t index, double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  const double rel = std::abs(analytic - numeric) / denom;
  if (rel > r.max_rel_error) r = {rel, input, index, analytic, numeric};
}

/// Central difference at step h, or with `extrapolate` the Richardson
/// combination of steps h and h/2, whose truncation error is O(h^4). The
/// latter allows steps large enough to rise above loss roundoff.
template <typename Probe>
double central_difference(const Probe& probe, double h, bool extrapolate) {
  const double d1 = (probe(h) - probe(-h)) / (2 * h);
  if (!extrapolate) return d1;
  const double d2 = (probe(h / 2) - probe(-h / 2)) / h;
  return (4 * d2 - d1) / 3;
}

}  // namespace detail

/// Compares reverse-mode gradients of a scalar function against central
/// differences, coordinate by coordinate. `f` must be pure.
inline GradCheckReport grad_check_report(
    const std::function<Array<double>(const std::vector<Array<double>>&)>& f, const std::vector<Array<double>>& xs,
    double h = 1e-5, bool extrapolate = false) {
  Tape<double> tape;
  std::vector<Array<double>> vars;
  for (const auto& x : xs) vars.push_back(tape.variable(x));
  const auto y = f(vars);
  tape.backward(y);

  GradCheckReport report;
  for (std::size_t a = 0; a < xs.size(); ++a) {
    const auto analytic = tape.grad(vars[a]);
    for (std::size_t i = 0; i < xs[a].size(); ++i) {
      auto probe = [&](double delta) {
        std::vector<Array<double>> shifted = xs;
        auto data = xs[a].to_vector();
        data[i] += delta;
        shifted[a] = Array<double>(xs[a].shape(), std::move(data));
        return f(shifted).item();
      };
      detail::note_error(report, a, i, analytic[i], detail::central_difference(probe, h, extrapolate));
    }
  }
  return report;
}

inline double grad_check(const std::function<Array<double>(const Array<double>&)>& f, const Array<double>& x,
                         double h = 1e-5) {
  return grad_check_report([&](const std::vector<Array<double>>& v) { return f(v[0]); }, {x}, h).max_rel_error;
}

/// Same comparison over every coordinate of every parameter in a store.
inline GradCheckReport grad_check_params(const std::function<Array<double>(const ParamSet<double>&)>& f,
                                         const ParameterStore<double>& store, double h = 1e-5,
                                         bool extrapolate = false) {
  Tape<double> tape;
  const auto bound = store.bind(&tape);
  tape.backward(f(bound));

  GradCheckReport report;
  std::size_t input = 0;
  for (const auto& [name, e] : store.entries()) {
    const auto analytic = tape.grad(bound[name]);
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      auto probe = [&](double delta) {
        auto set = store.bind(nullptr);
        auto data = e.value.to_vector();
        data[i] += delta;
        set.insert(name, Array<double>(e.value.shape(), std::move(data)));
        return f(set).item();
      };
      detail::note_error(report, input, i, analytic[i], detail::central_difference(probe, h, extrapolate));
    }
    ++input;
  }
  return report;
}

}  // namespace ufc
