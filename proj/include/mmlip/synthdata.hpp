#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "mmlip/errors.hpp"
#include "mmlip/linalg.hpp"
#include "mmlip/random.hpp"

namespace mmlip::data {

/// Generative settings. Modality 0 is the temporal modality: it is windowed
/// and flattened. Every other modality is observed once per window, at the
/// timestep right after it.
struct SyntheticSpec {
  std::size_t n_samples = 1000;  ///< raw timesteps before windowing
  std::size_t shared_latent_dim = 2;
  std::vector<std::size_t> modality_dims{3, 64};
  double noise_std = 0.1;
  std::size_t window_length = 20;
  std::size_t window_step = 1;
  /// Momentum of the latent random walk's velocity, in [0, 1).
  double smoothness = 0.9;
  std::uint64_t seed = 7;

  std::size_t windows() const noexcept {
    if (n_samples <= window_length || window_step == 0) return 0;
    return (n_samples - window_length - 1) / window_step + 1;
  }

  std::vector<std::size_t> feature_dims() const {
    std::vector<std::size_t> out = modality_dims;
    if (!out.empty()) out[0] *= window_length;
    return out;
  }

  void validate() const {
    if (modality_dims.empty()) throw InvalidInputError("invalid spec: no modalities");
    for (std::size_t d : modality_dims) {
      if (d < 1) throw InvalidInputError("invalid spec: modality dimension must be >= 1");
    }
    if (shared_latent_dim < 1) throw InvalidInputError("invalid spec: shared_latent_dim must be >= 1");
    if (window_length < 1 || window_step < 1) {
      throw InvalidInputError("invalid spec: window length and step must be >= 1");
    }
    if (n_samples <= window_length) {
      throw InvalidInputError("invalid spec: n_samples must exceed window_length");
    }
    if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) {
      throw InvalidInputError("invalid spec: noise_std must be finite and >= 0");
    }
    if (!(smoothness >= 0.0 && smoothness < 1.0)) {
      throw InvalidInputError("invalid spec: smoothness must be in [0, 1)");
    }
  }
};

enum class FaultKind { AdditiveNoise, ChannelDropout, Bias };

inline std::string fault_name(FaultKind k) {
  switch (k) {
    case FaultKind::AdditiveNoise: return "additive_noise";
    case FaultKind::ChannelDropout: return "channel_dropout";
    case FaultKind::Bias: return "bias";
  }
  return "?";
}

inline FaultKind parse_fault(const std::string& s) {
  if (s == "additive_noise") return FaultKind::AdditiveNoise;
  if (s == "channel_dropout") return FaultKind::ChannelDropout;
  if (s == "bias") return FaultKind::Bias;
  throw InvalidInputError("unknown fault kind '" + s + "'");
}

/// Perturbation applied to a fraction of the held-out samples.
/// AdditiveNoise adds magnitude·N(0,1) per feature, ChannelDropout zeroes
/// each feature with probability min(magnitude, 1), Bias adds magnitude.
struct FaultSpec {
  double fraction = 0.0;
  FaultKind kind = FaultKind::Bias;
  double magnitude = 5.0;
  std::vector<std::size_t> affected_modalities{0};
  std::uint64_t seed = 11;
};

/// Windowed, z-scored multimodal samples with a deterministic train/test
/// split and per-sample fault labels.
struct MultimodalDataset {
  /// modalities[i] is samples × features, stored normalized.
  std::vector<Matrix> modalities;
  std::vector<Vector> means;
  std::vector<Vector> stds;
  std::vector<std::uint8_t> faulty;
  std::vector<std::uint8_t> test;

  std::size_t samples() const noexcept {
    return modalities.empty() ? 0 : modalities.front().rows();
  }
  std::size_t modality_count() const noexcept { return modalities.size(); }

  std::vector<Vector> sample(std::size_t k) const {
    std::vector<Vector> out;
    out.reserve(modalities.size());
    for (const auto& m : modalities) {
      const auto r = m.row(k);
      out.emplace_back(r.begin(), r.end());
    }
    return out;
  }

  std::vector<std::size_t> indices(bool test_split) const {
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < samples(); ++k) {
      if (bool(test[k]) == test_split) out.push_back(k);
    }
    return out;
  }

  std::vector<std::vector<Vector>> gather(std::span<const std::size_t> idx) const {
    std::vector<std::vector<Vector>> out;
    out.reserve(idx.size());
    for (std::size_t k : idx) out.push_back(sample(k));
    return out;
  }

  /// Original-scale value of feature f of modality i in sample k.
  double denormalized(std::size_t i, std::size_t k, std::size_t f) const {
    return modalities[i](k, f) * stds[i][f] + means[i][f];
  }

  void validate() const {
    const std::size_t n = samples();
    for (const auto& m : modalities) {
      if (m.rows() != n) throw ShapeError("modalities have different sample counts");
    }
    if (faulty.size() != n || test.size() != n) throw ShapeError("label count mismatch");
    if (means.size() != modalities.size() || stds.size() != modalities.size()) {
      throw ShapeError("normalization stats do not match the modalities");
    }
  }
};

/// Deterministic 80/20 split: position p of the seeded shuffle is held out
/// iff p mod 5 == 4.
inline std::vector<std::uint8_t> split_mask(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed, 0x5u);
  std::shuffle(order.begin(), order.end(), rng.engine());
  std::vector<std::uint8_t> test(n, 0);
  for (std::size_t p = 0; p < n; ++p) test[order[p]] = (p % 5 == 4) ? 1 : 0;
  return test;
}

/// Per-feature mean and population std over the rows selected by `rows`;
/// a zero std is replaced by 1.
inline void feature_stats(const Matrix& m, std::span<const std::size_t> rows, Vector& mean,
                          Vector& stdev) {
  mean.assign(m.cols(), 0.0);
  stdev.assign(m.cols(), 0.0);
  for (std::size_t k : rows) axpy(1.0, m.row(k), mean);
  for (double& x : mean) x /= double(rows.size());
  for (std::size_t k : rows) {
    const auto r = m.row(k);
    for (std::size_t f = 0; f < m.cols(); ++f) {
      const double d = r[f] - mean[f];
      stdev[f] += d * d;
    }
  }
  for (double& s : stdev) {
    s = std::sqrt(s / double(rows.size()));
    if (!(s > 0.0)) s = 1.0;
  }
}

inline MultimodalDataset generate(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t k_lat = spec.shared_latent_dim;
  const std::size_t steps = spec.n_samples;
  Rng rng(spec.seed);

  std::vector<Matrix> maps;
  for (std::size_t d : spec.modality_dims) {
    Matrix a(d, k_lat);
    rng.fill_normal(a.data(), 1.0 / std::sqrt(double(k_lat)));
    maps.push_back(std::move(a));
  }

  // Momentum random walk: smooth, with genuinely shared low-frequency content.
  std::vector<Vector> z(steps, Vector(k_lat, 0.0));
  Vector velocity(k_lat, 0.0);
  rng.fill_normal(z[0]);
  const double kick = std::sqrt(1.0 - spec.smoothness * spec.smoothness);
  for (std::size_t t = 1; t < steps; ++t) {
    for (std::size_t c = 0; c < k_lat; ++c) {
      velocity[c] = spec.smoothness * velocity[c] + kick * rng.normal();
      z[t][c] = z[t - 1][c] + 0.2 * velocity[c];
    }
  }

  std::vector<Matrix> raw;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    Matrix obs(steps, maps[i].rows());
    for (std::size_t t = 0; t < steps; ++t) {
      Vector x = matvec(maps[i], z[t]);
      for (std::size_t f = 0; f < x.size(); ++f) {
        obs(t, f) = x[f] + (spec.noise_std > 0.0 ? rng.normal(0.0, spec.noise_std) : 0.0);
      }
    }
    raw.push_back(std::move(obs));
  }

  const std::size_t n = spec.windows();
  const auto dims = spec.feature_dims();
  MultimodalDataset ds;
  for (std::size_t i = 0; i < maps.size(); ++i) ds.modalities.emplace_back(n, dims[i]);
  for (std::size_t w = 0; w < n; ++w) {
    const std::size_t start = w * spec.window_step;
    const std::size_t d0 = spec.modality_dims[0];
    for (std::size_t t = 0; t < spec.window_length; ++t) {
      for (std::size_t f = 0; f < d0; ++f) {
        ds.modalities[0](w, t * d0 + f) = raw[0](start + t, f);
      }
    }
    const std::size_t now = start + spec.window_length;
    for (std::size_t i = 1; i < maps.size(); ++i) {
      for (std::size_t f = 0; f < dims[i]; ++f) ds.modalities[i](w, f) = raw[i](now, f);
    }
  }

  ds.faulty.assign(n, 0);
  ds.test = split_mask(n, spec.seed);
  const auto train = ds.indices(false);
  ds.means.resize(maps.size());
  ds.stds.resize(maps.size());
  for (std::size_t i = 0; i < maps.size(); ++i) {
    feature_stats(ds.modalities[i], train, ds.means[i], ds.stds[i]);
    auto& m = ds.modalities[i];
    for (std::size_t k = 0; k < n; ++k) {
      auto r = m.row(k);
      for (std::size_t f = 0; f < m.cols(); ++f) r[f] = (r[f] - ds.means[i][f]) / ds.stds[i][f];
    }
  }
  return ds;
}

/// Returns a copy of `ds` in which round(fraction · |test split|) held-out
/// samples are perturbed and labelled faulty.
inline MultimodalDataset inject_faults(const MultimodalDataset& ds, const FaultSpec& fault) {
  if (!(fault.fraction >= 0.0 && fault.fraction <= 1.0)) {
    throw InvalidInputError("invalid spec: fault fraction must be in [0, 1]");
  }
  if (fault.affected_modalities.empty()) {
    throw InvalidInputError("invalid spec: no affected modalities");
  }
  for (std::size_t i : fault.affected_modalities) {
    if (i >= ds.modality_count()) throw InvalidInputError("invalid spec: affected modality out of range");
  }
  MultimodalDataset out = ds;
  auto candidates = ds.indices(true);
  const auto count = std::size_t(std::llround(fault.fraction * double(candidates.size())));
  Rng rng(fault.seed);
  std::shuffle(candidates.begin(), candidates.end(), rng.engine());
  candidates.resize(count);
  std::sort(candidates.begin(), candidates.end());

  const double drop_p = std::clamp(fault.magnitude, 0.0, 1.0);
  for (std::size_t k : candidates) {
    out.faulty[k] = 1;
    for (std::size_t i : fault.affected_modalities) {
      for (double& x : out.modalities[i].row(k)) {
        switch (fault.kind) {
          case FaultKind::AdditiveNoise: x += fault.magnitude * rng.normal(); break;
          case FaultKind::ChannelDropout:
            if (rng.uniform(0.0, 1.0) < drop_p) x = 0.0;
            break;
          case FaultKind::Bias: x += fault.magnitude; break;
        }
      }
    }
  }
  return out;
}

}  // namespace mmlip::data
