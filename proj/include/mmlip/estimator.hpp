#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "mmlip/errors.hpp"
#include "mmlip/fusion.hpp"
#include "mmlip/linalg.hpp"
#include "mmlip/mlp.hpp"
#include "mmlip/random.hpp"

namespace mmlip::estimator {

inline constexpr double kDefaultEpsilon = 1e-9;

/// Attempts are split into fixed-size chunks, each drawing from its own
/// seeded substream. The result therefore does not depend on how chunks are
/// distributed over workers, and the first N attempts are shared by every
/// run with more than N attempts.
inline constexpr std::size_t kChunkSize = 256;

/// The box [low, high]^dim.
struct SamplingDomain {
  std::size_t dim = 1;
  double low = -1.0;
  double high = 1.0;

  void validate() const {
    if (dim < 1) throw InvalidInputError("sampling domain dimension must be >= 1");
    if (!(low < high) || !std::isfinite(low) || !std::isfinite(high)) {
      throw InvalidInputError("sampling domain needs finite low < high");
    }
  }
};

struct LipschitzEstimate {
  double value = 0.0;
  std::size_t pairs_evaluated = 0;
  std::size_t pairs_skipped = 0;
  std::uint64_t seed = 0;
};

/// A map ℝⁿ → ℝᵐ. Must be safe to call concurrently when workers > 1.
using VectorMap = std::function<Vector(std::span<const double>)>;

namespace detail {

struct ChunkResult {
  double max_ratio = 0.0;
  std::size_t evaluated = 0;
  std::size_t skipped = 0;
};

inline Vector evaluate_checked(const VectorMap& f, std::span<const double> x) {
  Vector y = f(x);
  if (!all_finite(y)) {
    throw NonFiniteError("map returned a non-finite value", Vector(x.begin(), x.end()));
  }
  return y;
}

/// Runs `run_chunk(c)` for every chunk and reduces by max / sum.
template <class RunChunk>
LipschitzEstimate reduce_chunks(std::size_t n_attempts, std::uint64_t seed,
                                std::size_t workers, RunChunk run_chunk) {
  const std::size_t chunks = (n_attempts + kChunkSize - 1) / kChunkSize;
  std::vector<ChunkResult> results(chunks);
  if (workers <= 1 || chunks <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) results[c] = run_chunk(c);
  } else {
    const std::size_t w = std::min(workers, chunks);
    std::vector<std::exception_ptr> errors(w);
    {
      std::vector<std::jthread> pool;
      for (std::size_t t = 0; t < w; ++t) {
        pool.emplace_back([&, t] {
          try {
            for (std::size_t c = t; c < chunks; c += w) results[c] = run_chunk(c);
          } catch (...) {
            errors[t] = std::current_exception();
          }
        });
      }
    }
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  LipschitzEstimate est;
  est.seed = seed;
  for (const auto& r : results) {
    est.value = std::max(est.value, r.max_ratio);
    est.pairs_evaluated += r.evaluated;
    est.pairs_skipped += r.skipped;
  }
  return est;
}

inline std::size_t chunk_length(std::size_t c, std::size_t n_attempts) {
  return std::min(kChunkSize, n_attempts - c * kChunkSize);
}

inline void check_common(std::size_t n, double epsilon) {
  if (n < 1) throw InvalidInputError("number of samples must be >= 1");
  if (!(epsilon > 0.0)) throw InvalidInputError("epsilon must be > 0");
}

/// max ‖g(x) − g(y)‖ / ‖x − y‖ over uniform pairs in the box.
inline LipschitzEstimate box_ratio_max(const VectorMap& g, const SamplingDomain& domain,
                                       std::size_t n_samples, double epsilon,
                                       std::uint64_t seed, std::size_t workers) {
  domain.validate();
  check_common(n_samples, epsilon);
  return reduce_chunks(n_samples, seed, workers, [&](std::size_t c) {
    Rng rng(seed, c);
    ChunkResult r;
    Vector x(domain.dim), y(domain.dim);
    for (std::size_t k = 0; k < chunk_length(c, n_samples); ++k) {
      rng.fill_uniform(x, domain.low, domain.high);
      rng.fill_uniform(y, domain.low, domain.high);
      const double dxy = distance(x, y);
      if (!(dxy > epsilon)) {
        ++r.skipped;
        continue;
      }
      const Vector gx = evaluate_checked(g, x);
      const Vector gy = evaluate_checked(g, y);
      r.max_ratio = std::max(r.max_ratio, distance(gx, gy) / dxy);
      ++r.evaluated;
    }
    return r;
  });
}

}  // namespace detail

/// Largest sampled ‖f(x) − f(y)‖ / ‖x − y‖ over uniform pairs in the box.
inline LipschitzEstimate estimate_function_lipschitz(const VectorMap& f,
                                                     const SamplingDomain& domain,
                                                     std::size_t n_samples,
                                                     double epsilon = kDefaultEpsilon,
                                                     std::uint64_t seed = 0,
                                                     std::size_t workers = 1) {
  return detail::box_ratio_max(f, domain, n_samples, epsilon, seed, workers);
}

/// Sampled gradient-Lipschitz estimate: the same ratio statistic applied to
/// the gradient map. Pairs closer than ε are counted as skipped.
inline LipschitzEstimate estimate_gradient_lipschitz(const VectorMap& grad_f,
                                                     const SamplingDomain& domain,
                                                     std::size_t n_samples,
                                                     double epsilon = kDefaultEpsilon,
                                                     std::uint64_t seed = 0,
                                                     std::size_t workers = 1) {
  auto est = detail::box_ratio_max(grad_f, domain, n_samples, epsilon, seed, workers);
  if (est.pairs_evaluated == 0) {
    throw DegenerateDomainError("every sampled pair was closer than epsilon");
  }
  return est;
}

/// Ratio statistic of `map` over pairs drawn uniformly, with replacement,
/// from a finite data sample.
inline LipschitzEstimate estimate_sample_lipschitz(const VectorMap& map,
                                                   std::span<const Vector> data_sample,
                                                   std::size_t n_pairs,
                                                   double epsilon = kDefaultEpsilon,
                                                   std::uint64_t seed = 0,
                                                   std::size_t workers = 1) {
  detail::check_common(n_pairs, epsilon);
  if (data_sample.size() < 2) {
    throw DegenerateDomainError("data sample needs at least two points");
  }
  // Some pair must be separated by more than ε.
  bool separated = false;
  for (std::size_t i = 1; i < data_sample.size() && !separated; ++i) {
    separated = distance(data_sample[0], data_sample[i]) > epsilon;
  }
  for (std::size_t i = 1; i < data_sample.size() && !separated; ++i) {
    for (std::size_t j = i + 1; j < data_sample.size() && !separated; ++j) {
      separated = distance(data_sample[i], data_sample[j]) > epsilon;
    }
  }
  if (!separated) {
    throw DegenerateDomainError("data sample has no two points farther apart than epsilon");
  }

  // Small samples are mapped once up front; pairs then only take differences.
  std::vector<Vector> images;
  if (data_sample.size() <= 2 * n_pairs) {
    images.reserve(data_sample.size());
    for (const auto& x : data_sample) images.push_back(detail::evaluate_checked(map, x));
  }

  auto est = detail::reduce_chunks(n_pairs, seed, workers, [&](std::size_t c) {
    Rng rng(seed, c);
    detail::ChunkResult r;
    for (std::size_t k = 0; k < detail::chunk_length(c, n_pairs); ++k) {
      const std::size_t ix = rng.index(data_sample.size());
      const std::size_t iy = rng.index(data_sample.size());
      const double dxy = distance(data_sample[ix], data_sample[iy]);
      if (!(dxy > epsilon)) {
        ++r.skipped;
        continue;
      }
      double num = 0.0;
      if (!images.empty()) {
        num = distance(images[ix], images[iy]);
      } else {
        num = distance(detail::evaluate_checked(map, data_sample[ix]),
                       detail::evaluate_checked(map, data_sample[iy]));
      }
      r.max_ratio = std::max(r.max_ratio, num / dxy);
      ++r.evaluated;
    }
    return r;
  });
  if (est.pairs_evaluated == 0) {
    throw DegenerateDomainError("every sampled pair was closer than epsilon");
  }
  return est;
}

/// Flattened input Jacobian of an MLP submodel, as a VectorMap.
inline VectorMap jacobian_map(const nn::Mlp& part) {
  return [&part](std::span<const double> x) {
    const Matrix j = part.input_jacobian(x);
    return Vector(j.data().begin(), j.data().end());
  };
}

/// Gradient-Lipschitz estimate of an encoder or decoder, with pairs drawn
/// from the data it actually sees.
inline LipschitzEstimate estimate_model_lipschitz(const nn::Mlp& part,
                                                  std::span<const Vector> data_sample,
                                                  std::size_t n_pairs,
                                                  double epsilon = kDefaultEpsilon,
                                                  std::uint64_t seed = 0,
                                                  std::size_t workers = 1) {
  for (const auto& x : data_sample) {
    if (x.size() != part.input_dim()) {
      throw ShapeError("data sample dimension does not match the submodel input");
    }
  }
  return estimate_sample_lipschitz(jacobian_map(part), data_sample, n_pairs, epsilon,
                                   seed, workers);
}

/// Function-Lipschitz counterpart of estimate_model_lipschitz.
inline LipschitzEstimate estimate_model_function_lipschitz(
    const nn::Mlp& part, std::span<const Vector> data_sample, std::size_t n_pairs,
    double epsilon = kDefaultEpsilon, std::uint64_t seed = 0, std::size_t workers = 1) {
  return estimate_sample_lipschitz(
      [&part](std::span<const double> x) { return part.forward(x); }, data_sample,
      n_pairs, epsilon, seed, workers);
}

// ---------------------------------------------------------------------------
// Raw attention map helpers

/// Splits a stacked (v₁;…;vₙ) vector into n latents of dimension d.
inline std::vector<Vector> split_stacked(std::span<const double> x, std::size_t n,
                                         std::size_t d) {
  if (x.size() != n * d) throw ShapeError("stacked vector has the wrong length");
  std::vector<Vector> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i].assign(x.begin() + i * d, x.begin() + (i + 1) * d);
  return out;
}

/// Full Jacobian ∂Φ/∂(v₁;…;vₙ), nd × nd, by stacking the per-modality blocks.
inline Matrix attention_full_jacobian(const fusion::AttentionParams& params,
                                      std::span<const Vector> latents) {
  const std::size_t n = params.modalities();
  const std::size_t d = params.dim();
  Matrix full(n * d, n * d);
  for (std::size_t k = 0; k < n; ++k) {
    const Matrix jk = fusion::attention_jacobian(params, latents, k);
    for (std::size_t r = 0; r < n * d; ++r) {
      for (std::size_t c = 0; c < d; ++c) full(r, k * d + c) = jk(r, c);
    }
  }
  return full;
}

/// Φ as a VectorMap over the stacked input.
inline VectorMap attention_map(const fusion::AttentionParams& params) {
  return [params](std::span<const double> x) {
    const auto v = split_stacked(x, params.modalities(), params.dim());
    return fusion::fuse(fusion::Attention{params}, v).u;
  };
}

/// Flattened ∇Φ as a VectorMap over the stacked input.
inline VectorMap attention_gradient_map(const fusion::AttentionParams& params) {
  return [params](std::span<const double> x) {
    const auto v = split_stacked(x, params.modalities(), params.dim());
    const Matrix j = attention_full_jacobian(params, v);
    return Vector(j.data().begin(), j.data().end());
  };
}

/// Box whose points satisfy ‖vᵢ‖ ≤ r_max for every modality block.
inline SamplingDomain attention_domain(std::size_t n, std::size_t d, double r_max) {
  const double half = r_max / std::sqrt(double(d));
  return {n * d, -half, half};
}

struct GradConstantCalibration {
  /// sup over the box of ‖D∇Φ‖ found by the search.
  double sup_derivative = 0.0;
  /// sup_derivative / (M³ R).
  double c_n = 0.0;
  double m_max = 0.0;
  double r_max = 0.0;
};

/// Brute-force maximization of the gradient-Lipschitz constant of the raw
/// attention map over attention_domain(n, d, r_max).
///
/// ∇Φ is a homogeneous quadratic in the stacked input, so its directional
/// derivative D∇Φ(x)[h] is exactly the central difference
/// (∇Φ(x+h) − ∇Φ(x−h)) / 2 and is linear in both x and h. For fixed x the
/// best h is the top right singular vector of h ↦ D∇Φ(x)[h]; for fixed h the
/// best x is a vertex of the box. The search alternates between the two from
/// several random vertices.
inline GradConstantCalibration calibrate_attention_grad_constant(
    const fusion::AttentionParams& params, double r_max, std::size_t restarts,
    std::uint64_t seed) {
  params.validate();
  if (params.unit_norm_inputs || params.scale_by_sqrt_d) {
    throw UnsupportedConfigurationError("calibration covers the raw attention map only");
  }
  const std::size_t n = params.modalities();
  const std::size_t d = params.dim();
  const std::size_t dim = n * d;
  const auto domain = attention_domain(n, d, r_max);
  const auto grad = attention_gradient_map(params);

  // Column m of L_x is D∇Φ(x)[e_m].
  auto derivative_operator = [&](const Vector& x) {
    const std::size_t out = dim * dim;
    Matrix op(out, dim);
    Vector xp = x, xm = x;
    for (std::size_t m = 0; m < dim; ++m) {
      xp[m] += 1.0;
      xm[m] -= 1.0;
      const Vector gp = grad(xp);
      const Vector gm = grad(xm);
      for (std::size_t r = 0; r < out; ++r) op(r, m) = 0.5 * (gp[r] - gm[r]);
      xp[m] = x[m];
      xm[m] = x[m];
    }
    return op;
  };
  // Linear in x for fixed h: D∇Φ(x)[h] = Σ_m x_m · (∂/∂x_m)(D∇Φ[h]); the
  // gradient of ‖·‖² w.r.t. x picks the maximizing vertex sign pattern.
  auto best_vertex = [&](const Vector& h, const Vector& x0) {
    const std::size_t out = dim * dim;
    // Columns: D∇Φ(e_m)[h] for each basis point e_m (bilinear in (x, h)).
    Matrix cols(out, dim);
    for (std::size_t m = 0; m < dim; ++m) {
      Vector e(dim, 0.0);
      Vector ep = h, em = h;
      e[m] = 1.0;
      // D∇Φ(e_m)[h] = (∇Φ(e_m + h) − ∇Φ(e_m − h)) / 2
      for (std::size_t q = 0; q < dim; ++q) {
        ep[q] = e[q] + h[q];
        em[q] = e[q] - h[q];
      }
      const Vector gp = grad(ep);
      const Vector gm = grad(em);
      for (std::size_t r = 0; r < out; ++r) cols(r, m) = 0.5 * (gp[r] - gm[r]);
    }
    // Coordinate ascent over sign patterns.
    Vector x = x0;
    Vector val = matvec(cols, x);
    bool improved = true;
    while (improved) {
      improved = false;
      for (std::size_t m = 0; m < dim; ++m) {
        const double flipped = -x[m];
        Vector trial = val;
        axpy(flipped - x[m], cols.col(m), trial);
        if (norm2(trial) > norm2(val) * (1.0 + 1e-12)) {
          x[m] = flipped;
          val = std::move(trial);
          improved = true;
        }
      }
    }
    return x;
  };

  GradConstantCalibration cal;
  cal.r_max = r_max;
  for (const auto& w : params.weights) {
    cal.m_max = std::max(cal.m_max, spectral_norm(w, 1e-12, 10000));
  }
  Rng rng(seed);
  const double half = domain.high;
  for (std::size_t s = 0; s < restarts; ++s) {
    Vector x(dim);
    for (double& v : x) v = rng.uniform(0.0, 1.0) < 0.5 ? -half : half;
    for (int round = 0; round < 6; ++round) {
      const auto op = derivative_operator(x);
      const auto sv = spectral_norm_full(op, {1e-12, 10000});
      cal.sup_derivative = std::max(cal.sup_derivative, sv.value);
      if (sv.value == 0.0) break;
      x = best_vertex(sv.right, x);
    }
    const auto op = derivative_operator(x);
    cal.sup_derivative = std::max(cal.sup_derivative, spectral_norm(op, 1e-12, 10000));
  }
  const double denom = cal.m_max * cal.m_max * cal.m_max * r_max;
  cal.c_n = denom > 0.0 ? cal.sup_derivative / denom : 0.0;
  return cal;
}

}  // namespace mmlip::estimator
