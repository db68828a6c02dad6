#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "mmlip/errors.hpp"
#include "mmlip/linalg.hpp"

namespace mmlip::optim {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment buffers, one per parameter tensor.
struct AdamState {
  std::vector<Vector> m;
  std::vector<Vector> v;
  std::size_t step = 0;
};

/// One bias-corrected Adam update of `params` in place. `state` is sized on
/// first use.
inline void adam_step(std::span<const std::span<double>> params,
                      std::span<const std::span<const double>> grads, AdamState& state,
                      double learning_rate, const AdamHyper& hyper = {}) {
  if (params.size() != grads.size()) throw ShapeError("adam: parameter/gradient count mismatch");
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t].size() != grads[t].size()) throw ShapeError("adam: tensor shape mismatch");
    if (!all_finite(grads[t])) throw DivergenceError("non-finite gradient");
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  } else if (state.m.size() != params.size()) {
    throw ShapeError("adam: state does not match the parameter list");
  }

  ++state.step;
  const double c1 = 1.0 - std::pow(hyper.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(hyper.beta2, double(state.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& m = state.m[t];
    auto& v = state.v[t];
    for (std::size_t k = 0; k < params[t].size(); ++k) {
      const double g = grads[t][k];
      m[k] = hyper.beta1 * m[k] + (1.0 - hyper.beta1) * g;
      v[k] = hyper.beta2 * v[k] + (1.0 - hyper.beta2) * g * g;
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      params[t][k] -= learning_rate * m_hat / (std::sqrt(v_hat) + hyper.epsilon);
    }
  }
}

}  // namespace mmlip::optim
