#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "ufc/numerics/params.hpp"

namespace ufc {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// Adam moments per parameter plus the step counter.
template <typename T>
struct AdamWState {
  struct Moments {
    std::vector<T> m;
    std::vector<T> v;
  };
  std::map<std::string, Moments> moments;
  long step = 0;
};

/// One AdamW update. Weight decay is decoupled: it shrinks the weights
/// directly and never enters the moment estimates.
template <typename T>
void adamw_step(ParameterStore<T>& params, AdamWState<T>& state, const AdamWConfig& cfg) {
  for (const auto& [name, e] : params.entries()) {
    if (e.grad.size() != e.value.size()) throw ContractError("adamw_step: parameter '" + name + "' has no gradient");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (const auto& [name, e] : params.entries()) {
    auto& mom = state.moments[name];
    const auto n = e.value.size();
    if (mom.m.size() != n) {
      mom.m.assign(n, T(0));
      mom.v.assign(n, T(0));
    }
    std::vector<T> w = e.value.to_vector();
    for (std::size_t i = 0; i < n; ++i) {
      const double g = e.grad[i];
      mom.m[i] = static_cast<T>(cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * g);
      mom.v[i] = static_cast<T>(cfg.beta2 * mom.v[i] + (1.0 - cfg.beta2) * g * g);
      const double m_hat = mom.m[i] / bc1;
      const double v_hat = mom.v[i] / bc2;
      double wi = w[i];
      wi -= cfg.lr * cfg.weight_decay * wi;
      wi -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
      w[i] = static_cast<T>(wi);
    }
    params.set(name, Array<T>(e.value.shape(), std::move(w)));
  }
}

}  // namespace ufc
