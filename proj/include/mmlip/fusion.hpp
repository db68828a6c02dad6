#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mmlip/errors.hpp"
#include "mmlip/linalg.hpp"

namespace mmlip::fusion {

/// Per-modality bilinear projection matrices and the stabilization switches
/// applied inside fuse().
struct AttentionParams {
  std::vector<Matrix> weights;
  bool unit_norm_inputs = false;
  bool spectral_normalize = false;
  bool scale_by_sqrt_d = false;
  double lambda_reg = 0.0;

  std::size_t modalities() const noexcept { return weights.size(); }
  std::size_t dim() const noexcept {
    return weights.empty() ? 0 : weights.front().rows();
  }

  void validate() const {
    if (weights.size() < 2) {
      throw InvalidInputError("attention needs at least two modalities");
    }
    const std::size_t d = weights.front().rows();
    for (const auto& w : weights) {
      if (w.rows() != d || w.cols() != d) {
        throw ShapeError("attention weights must all be " + std::to_string(d) +
                         "x" + std::to_string(d));
      }
      require_finite(w.data(), "attention weight");
    }
    if (!(lambda_reg >= 0.0) || !std::isfinite(lambda_reg)) {
      throw InvalidInputError("attention lambda_reg must be finite and >= 0");
    }
  }
};

struct Sum {};
struct Concat {};
struct Attention {
  AttentionParams params;
};

using FusionKind = std::variant<Sum, Concat, Attention>;

inline std::string kind_name(const FusionKind& kind) {
  return std::visit(
      [](const auto& k) -> std::string {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, Sum>) return "sum";
        else if constexpr (std::is_same_v<K, Concat>) return "concat";
        else return "attention";
      },
      kind);
}

struct FusedOutput {
  Vector u;
  /// α₁…αₙ, attention only.
  Vector coefficients;
  /// Pairwise scores a_ij (diagonal zero), attention only.
  Matrix scores;
};

/// Power-iteration settings used whenever a weight is spectrally normalized.
inline constexpr PowerIterationOptions kNormalizationPowerIteration{1e-14, 20000};

/// W / σ_max(W). A zero matrix is returned unchanged.
inline Matrix spectrally_normalized(const Matrix& w) {
  const double s = spectral_norm_full(w, kNormalizationPowerIteration).value;
  if (s == 0.0) return w;
  return w * (1.0 / s);
}

/// The weights the attention map actually applies, after the optional
/// spectral normalization.
inline std::vector<Matrix> effective_weights(const AttentionParams& params) {
  if (!params.spectral_normalize) return params.weights;
  std::vector<Matrix> out;
  out.reserve(params.weights.size());
  for (const auto& w : params.weights) out.push_back(spectrally_normalized(w));
  return out;
}

/// Inputs after the optional unit normalization.
inline std::vector<Vector> effective_inputs(const AttentionParams& params,
                                            std::span<const Vector> latents) {
  std::vector<Vector> out(latents.begin(), latents.end());
  if (!params.unit_norm_inputs) return out;
  for (auto& v : out) {
    const double n = norm2(v);
    if (n == 0.0) {
      throw DegenerateInputError("zero-norm latent cannot be normalized to unit length");
    }
    for (double& x : v) x /= n;
  }
  return out;
}

namespace detail {

inline void check_latents(std::span<const Vector> latents) {
  if (latents.empty()) throw ShapeError("fusion needs at least one latent");
  for (const auto& v : latents) {
    if (v.empty()) throw ShapeError("fusion latent is empty");
    require_finite(v, "fusion latent");
  }
}

inline void check_equal_dims(std::span<const Vector> latents, std::size_t d) {
  for (const auto& v : latents) {
    if (v.size() != d) {
      throw ShapeError("latent dimension " + std::to_string(v.size()) +
                       " differs from expected " + std::to_string(d));
    }
  }
}

inline FusedOutput fuse_attention(const AttentionParams& params,
                                  std::span<const Vector> latents) {
  params.validate();
  const std::size_t n = params.modalities();
  const std::size_t d = params.dim();
  if (latents.size() != n) {
    throw ShapeError("attention expects " + std::to_string(n) + " latents, got " +
                     std::to_string(latents.size()));
  }
  check_equal_dims(latents, d);

  const auto w = effective_weights(params);
  const auto v = effective_inputs(params, latents);
  std::vector<Vector> projected(n);
  for (std::size_t i = 0; i < n; ++i) projected[i] = matvec(w[i], v[i]);

  const double scale = params.scale_by_sqrt_d ? 1.0 / std::sqrt(double(d)) : 1.0;
  FusedOutput out;
  out.scores = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double a = scale * dot(projected[i], projected[j]);
      out.scores(i, j) = a;
      out.scores(j, i) = a;
    }
  }
  out.coefficients.assign(n, 0.0);
  out.u.assign(n * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) s += out.scores(i, j);
    }
    const double alpha = s / double(n - 1);
    out.coefficients[i] = alpha;
    for (std::size_t k = 0; k < d; ++k) out.u[i * d + k] = alpha * v[i][k];
  }
  return out;
}

}  // namespace detail

/// Applies the aggregation operator to the per-modality latents.
inline FusedOutput fuse(const FusionKind& kind, std::span<const Vector> latents) {
  detail::check_latents(latents);
  if (const auto* att = std::get_if<Attention>(&kind)) {
    return detail::fuse_attention(att->params, latents);
  }
  FusedOutput out;
  if (std::holds_alternative<Sum>(kind)) {
    const std::size_t d = latents.front().size();
    detail::check_equal_dims(latents, d);
    out.u.assign(d, 0.0);
    for (const auto& v : latents) axpy(1.0, v, out.u);
  } else {
    for (const auto& v : latents) out.u.insert(out.u.end(), v.begin(), v.end());
  }
  return out;
}

/// Stacked blocks B_{i,k} = ∂(α_i v_i)/∂v_k of the raw attention map. Spectral
/// normalization is allowed (it only substitutes the weights); input
/// normalization and √d scaling are not covered by the closed form.
inline Matrix attention_jacobian(const AttentionParams& params,
                                 std::span<const Vector> latents, std::size_t k) {
  if (params.unit_norm_inputs || params.scale_by_sqrt_d) {
    throw UnsupportedConfigurationError(
        "analytic attention Jacobian covers only the unnormalized, unscaled map");
  }
  params.validate();
  detail::check_latents(latents);
  const std::size_t n = params.modalities();
  const std::size_t d = params.dim();
  if (latents.size() != n) throw ShapeError("attention_jacobian: latent count mismatch");
  detail::check_equal_dims(latents, d);
  if (k >= n) throw InvalidInputError("attention_jacobian: modality index out of range");

  const auto w = effective_weights(params);
  std::vector<Vector> projected(n);
  for (std::size_t i = 0; i < n; ++i) projected[i] = matvec(w[i], latents[i]);
  const double inv = 1.0 / double(n - 1);

  Matrix jac(n * d, d);
  for (std::size_t i = 0; i < n; ++i) {
    Vector dalpha;  // ∂α_i/∂v_k
    double alpha = 0.0;
    if (i == k) {
      Vector others(d, 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        axpy(1.0, projected[j], others);
        alpha += dot(projected[i], projected[j]);
      }
      alpha *= inv;
      dalpha = scaled(matvec_transposed(w[i], others), inv);
    } else {
      dalpha = scaled(matvec_transposed(w[k], projected[i]), inv);
    }
    for (std::size_t r = 0; r < d; ++r) {
      for (std::size_t c = 0; c < d; ++c) {
        // block(r, c) = ∂(α_i v_i[r]) / ∂v_k[c] = v_i[r] · ∂α_i/∂v_k[c]
        jac(i * d + r, c) = latents[i][r] * dalpha[c];
      }
      if (i == k) jac(i * d + r, r) += alpha;
    }
  }
  return jac;
}

/// λ Σᵢ ‖Wᵢ‖²_F
inline double attention_reg_term(const AttentionParams& params) {
  double s = 0.0;
  for (const auto& w : params.weights) {
    for (double x : w.data()) s += x * x;
  }
  return params.lambda_reg * s;
}

/// ∂/∂Wᵢ of attention_reg_term, i.e. 2λWᵢ.
inline Matrix attention_reg_gradient(const AttentionParams& params, std::size_t i) {
  if (i >= params.weights.size()) {
    throw InvalidInputError("attention_reg_gradient: index out of range");
  }
  return params.weights[i] * (2.0 * params.lambda_reg);
}

/// ∂u/∂v_k for any fusion kind.
inline Matrix fusion_jacobian(const FusionKind& kind, std::span<const Vector> latents,
                              std::size_t k) {
  detail::check_latents(latents);
  if (k >= latents.size()) throw InvalidInputError("fusion_jacobian: index out of range");
  if (const auto* att = std::get_if<Attention>(&kind)) {
    return attention_jacobian(att->params, latents, k);
  }
  if (std::holds_alternative<Sum>(kind)) {
    const std::size_t d = latents.front().size();
    detail::check_equal_dims(latents, d);
    return Matrix::identity(d);
  }
  std::size_t total = 0;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < latents.size(); ++i) {
    if (i == k) offset = total;
    total += latents[i].size();
  }
  const std::size_t dk = latents[k].size();
  Matrix jac(total, dk);
  for (std::size_t c = 0; c < dk; ++c) jac(offset + c, c) = 1.0;
  return jac;
}

}  // namespace mmlip::fusion
