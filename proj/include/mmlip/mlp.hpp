#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mmlip/errors.hpp"
#include "mmlip/linalg.hpp"
#include "mmlip/random.hpp"

namespace mmlip::nn {

enum class Activation { ReLU, Identity };

inline std::string activation_name(Activation a) {
  return a == Activation::ReLU ? "relu" : "identity";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "identity") return Activation::Identity;
  throw InvalidInputError("unknown activation '" + s + "'");
}

/// Layer widths input…output; one activation per hidden layer. The output
/// layer is always affine.
struct MlpSpec {
  std::vector<std::size_t> widths;
  std::vector<Activation> hidden_activations;

  void validate() const {
    if (widths.size() < 2) throw InvalidInputError("MLP needs at least two widths");
    for (std::size_t w : widths) {
      if (w < 1) throw InvalidInputError("MLP widths must be >= 1");
    }
    if (hidden_activations.size() != widths.size() - 2) {
      throw InvalidInputError("MLP needs one activation per hidden layer");
    }
  }
};

class Mlp {
 public:
  std::vector<Matrix> weights;  ///< weights[l] is widths[l+1] × widths[l]
  std::vector<Vector> biases;
  std::vector<Activation> activations;  ///< hidden layers only

  Mlp() = default;

  /// Zero parameters with the shapes of `spec`.
  explicit Mlp(const MlpSpec& spec) {
    spec.validate();
    for (std::size_t l = 0; l + 1 < spec.widths.size(); ++l) {
      weights.emplace_back(spec.widths[l + 1], spec.widths[l]);
      biases.emplace_back(spec.widths[l + 1], 0.0);
    }
    activations = spec.hidden_activations;
  }

  /// Uniform in ±1/√fan_in for weights and biases.
  static Mlp initialize(const MlpSpec& spec, Rng& rng) {
    Mlp m(spec);
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
      const double bound = 1.0 / std::sqrt(double(m.weights[l].cols()));
      rng.fill_uniform(m.weights[l].data(), -bound, bound);
      rng.fill_uniform(m.biases[l], -bound, bound);
    }
    return m;
  }

  MlpSpec spec() const {
    MlpSpec s;
    if (weights.empty()) return s;
    s.widths.push_back(weights.front().cols());
    for (const auto& w : weights) s.widths.push_back(w.rows());
    s.hidden_activations = activations;
    return s;
  }

  std::size_t layers() const noexcept { return weights.size(); }
  std::size_t input_dim() const noexcept { return weights.empty() ? 0 : weights.front().cols(); }
  std::size_t output_dim() const noexcept { return weights.empty() ? 0 : weights.back().rows(); }

  /// Activation Lipschitz constant per layer (output layer counts as 1).
  std::vector<double> activation_lipschitz() const {
    return std::vector<double>(weights.size(), 1.0);
  }

  /// Per-layer inputs and pre-activations recorded by forward().
  struct Trace {
    std::vector<Vector> inputs;
    std::vector<Vector> pre;
  };

  Vector forward(std::span<const double> x) const {
    Trace unused;
    return forward(x, unused);
  }

  Vector forward(std::span<const double> x, Trace& trace) const {
    if (x.size() != input_dim()) {
      throw ShapeError("MLP input has " + std::to_string(x.size()) + " entries, expected " +
                       std::to_string(input_dim()));
    }
    trace.inputs.assign(layers(), {});
    trace.pre.assign(layers(), {});
    Vector h(x.begin(), x.end());
    for (std::size_t l = 0; l < layers(); ++l) {
      trace.inputs[l] = h;
      Vector z = matvec(weights[l], h);
      for (std::size_t r = 0; r < z.size(); ++r) z[r] += biases[l][r];
      trace.pre[l] = z;
      if (l + 1 < layers() && activations[l] == Activation::ReLU) {
        for (double& v : z) v = v > 0.0 ? v : 0.0;
      }
      h = std::move(z);
    }
    return h;
  }

  /// Accumulates ∂L/∂θ into `grad` (same shapes) and returns ∂L/∂x.
  Vector backward(const Trace& trace, std::span<const double> d_out, Mlp& grad) const {
    Vector delta(d_out.begin(), d_out.end());
    for (std::size_t l = layers(); l-- > 0;) {
      if (l + 1 < layers() && activations[l] == Activation::ReLU) {
        for (std::size_t r = 0; r < delta.size(); ++r) {
          if (!(trace.pre[l][r] > 0.0)) delta[r] = 0.0;
        }
      }
      add_outer(grad.weights[l], 1.0, delta, trace.inputs[l]);
      axpy(1.0, delta, grad.biases[l]);
      delta = matvec_transposed(weights[l], delta);
    }
    return delta;
  }

  /// ∂f/∂x at x, output_dim × input_dim.
  Matrix input_jacobian(std::span<const double> x) const {
    Trace trace;
    forward(x, trace);
    Matrix jac = weights.front();
    for (std::size_t l = 1; l < layers(); ++l) {
      if (activations[l - 1] == Activation::ReLU) {
        for (std::size_t r = 0; r < jac.rows(); ++r) {
          if (!(trace.pre[l - 1][r] > 0.0)) {
            for (double& v : jac.row(r)) v = 0.0;
          }
        }
      }
      jac = matmul(weights[l], jac);
    }
    return jac;
  }

  /// Zero-valued copy with the same shapes.
  Mlp zeros_like() const {
    Mlp z;
    z.activations = activations;
    for (const auto& w : weights) z.weights.emplace_back(w.rows(), w.cols());
    for (const auto& b : biases) z.biases.emplace_back(b.size(), 0.0);
    return z;
  }
};

}  // namespace mmlip::nn
