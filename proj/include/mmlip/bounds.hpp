#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "mmlip/errors.hpp"
#include "mmlip/linalg.hpp"

namespace mmlip::bounds {

namespace detail {

inline void require_nonnegative(double x, const char* name) {
  if (!std::isfinite(x) || x < 0.0) {
    throw InvalidInputError(std::string(name) + " must be finite and >= 0");
  }
}

}  // namespace detail

/// Constants entering the decoder-parameter gradient Lipschitz constant.
struct DecoderBoundInputs {
  double b_grad = 0.0;      ///< bound on the decoder gradient norm
  double l_dec_func = 0.0;  ///< Lipschitz constant of the decoder map
  double l_dec_grad = 0.0;  ///< Lipschitz constant of the decoder gradient
  double c_input = 0.0;     ///< bound on ‖x‖
  double l_agg = 0.0;       ///< Lipschitz constant of the aggregation
  double l_enc_func = 0.0;  ///< Lipschitz constant of the encoder map
};

struct DecoderConstants {
  double l_dec_func = 0.0;
  double l_dec_grad = 0.0;
};

/// Constants entering the encoder-parameter gradient Lipschitz constant.
struct EncoderBoundInputs {
  std::vector<DecoderConstants> decoders;
  double b_agg = 0.0;        ///< ‖∂u/∂θ_E⁽ᵏ⁾‖
  double l_agg_func = 0.0;
  double l_agg_grad_k = 0.0;
  double c_input = 0.0;
};

/// 2·[B + B·L_D + C·L_D^grad]·L_agg·L_E
inline double decoder_grad_bound(const DecoderBoundInputs& in) {
  detail::require_nonnegative(in.b_grad, "b_grad");
  detail::require_nonnegative(in.l_dec_func, "l_dec_func");
  detail::require_nonnegative(in.l_dec_grad, "l_dec_grad");
  detail::require_nonnegative(in.c_input, "c_input");
  detail::require_nonnegative(in.l_agg, "l_agg");
  detail::require_nonnegative(in.l_enc_func, "l_enc_func");
  return 2.0 *
         (in.b_grad + in.b_grad * in.l_dec_func + in.c_input * in.l_dec_grad) *
         in.l_agg * in.l_enc_func;
}

/// 2·Σᵢ [L_Dᵢ·B + L_Dᵢ²·B·L_agg + C·L_Dᵢ^grad·B + C·L_Dᵢ·L_agg^grad,k]
inline double encoder_grad_bound(const EncoderBoundInputs& in) {
  if (in.decoders.empty()) {
    throw InvalidInputError("encoder_grad_bound needs at least one decoder");
  }
  detail::require_nonnegative(in.b_agg, "b_agg");
  detail::require_nonnegative(in.l_agg_func, "l_agg_func");
  detail::require_nonnegative(in.l_agg_grad_k, "l_agg_grad_k");
  detail::require_nonnegative(in.c_input, "c_input");
  double s = 0.0;
  for (const auto& dec : in.decoders) {
    detail::require_nonnegative(dec.l_dec_func, "l_dec_func");
    detail::require_nonnegative(dec.l_dec_grad, "l_dec_grad");
    const double ld = dec.l_dec_func;
    s += ld * in.b_agg + ld * ld * in.b_agg * in.l_agg_func +
         in.c_input * dec.l_dec_grad * in.b_agg + in.c_input * ld * in.l_agg_grad_k;
  }
  return 2.0 * s;
}

struct AggregationBounds {
  double l_concat = 0.0;
  double l_sum = 0.0;
};

/// Lipschitz constants of concatenating vs summing maps with the given
/// per-map constants. l_concat ≤ l_sum with equality iff at most one is
/// nonzero.
inline AggregationBounds aggregation_bounds(std::span<const double> l_funcs) {
  double sq = 0.0;
  double sum = 0.0;
  for (double l : l_funcs) {
    detail::require_nonnegative(l, "encoder Lipschitz constant");
    sq += l * l;
    sum += l;
  }
  return {std::sqrt(sq), sum};
}

/// 4·M²·R² for the raw pairwise-averaged bilinear attention map, where M is
/// the largest weight spectral norm and R the largest input norm.
inline double attention_func_bound(double m_max, double r_max) {
  detail::require_nonnegative(m_max, "m_max");
  detail::require_nonnegative(r_max, "r_max");
  return 4.0 * m_max * m_max * r_max * r_max;
}

/// Default O(n) constant for the attention gradient bound.
inline double default_attention_grad_constant(std::size_t n_modalities) {
  return 4.0 * double(n_modalities);
}

/// Cₙ·M³·R
inline double attention_grad_bound(double c_n, double m_max, double r_max) {
  detail::require_nonnegative(c_n, "c_n");
  detail::require_nonnegative(m_max, "m_max");
  detail::require_nonnegative(r_max, "r_max");
  return c_n * m_max * m_max * m_max * r_max;
}

/// ∏ ‖W_ℓ‖₂ · L_σℓ
inline double mlp_func_lipschitz(std::span<const Matrix> layer_weights,
                                 std::span<const double> activation_lipschitz) {
  if (layer_weights.empty()) throw InvalidInputError("mlp_func_lipschitz: no layers");
  if (layer_weights.size() != activation_lipschitz.size()) {
    throw InvalidInputError("mlp_func_lipschitz: " +
                            std::to_string(layer_weights.size()) + " layers but " +
                            std::to_string(activation_lipschitz.size()) +
                            " activation constants");
  }
  double prod = 1.0;
  for (std::size_t l = 0; l < layer_weights.size(); ++l) {
    detail::require_nonnegative(activation_lipschitz[l], "activation Lipschitz constant");
    prod *= spectral_norm(layer_weights[l], 1e-12, 10000) * activation_lipschitz[l];
  }
  return prod;
}

/// Largest Euclidean norm in a sample, used to measure C (input norms) or
/// B_grad (gradient norms) empirically.
inline double max_observed_norm(std::span<const Vector> sample) {
  double m = 0.0;
  for (const auto& v : sample) m = std::max(m, norm2(v));
  return m;
}

}  // namespace mmlip::bounds
