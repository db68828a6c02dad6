#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mmlip/errors.hpp"
#include "mmlip/linalg.hpp"

namespace mmlip::anomaly {

enum class KernelType { Rbf, Linear };

inline std::string kernel_name(KernelType k) { return k == KernelType::Rbf ? "rbf" : "linear"; }

inline KernelType parse_kernel(const std::string& s) {
  if (s == "rbf") return KernelType::Rbf;
  if (s == "linear") return KernelType::Linear;
  throw InvalidInputError("unknown kernel '" + s + "'");
}

struct Kernel {
  KernelType type = KernelType::Rbf;
  /// RBF exp(−γ‖x−y‖²). Non-positive means "choose by the median heuristic".
  double gamma = 0.0;

  double operator()(std::span<const double> a, std::span<const double> b) const {
    if (type == KernelType::Linear) return dot(a, b);
    const double d = distance(a, b);
    return std::exp(-gamma * d * d);
  }
};

inline constexpr double kEigenvalueFloor = 1e-10;
inline constexpr double kDefaultPercentile = 95.0;

struct AnomalyModel {
  std::vector<Vector> train;
  Kernel kernel;
  /// Columns are eigenvectors of the centered Gram matrix divided by √λ,
  /// so a projection is a plain dot product with the centered kernel row.
  Matrix coefficients;
  Vector eigenvalues;
  Vector gram_column_means;
  double gram_mean = 0.0;
  Vector score_mean;
  Matrix score_cov_inverse;
  double threshold = 0.0;
  /// Non-empty when fewer components than requested were usable.
  std::string warning;

  std::size_t components() const noexcept { return eigenvalues.size(); }
  std::size_t dim() const noexcept { return train.empty() ? 0 : train.front().size(); }
};

/// γ = 1 / (2·median²) over all pairwise distances.
inline double median_heuristic_gamma(std::span<const Vector> xs) {
  std::vector<double> d;
  d.reserve(xs.size() * (xs.size() - 1) / 2);
  for (std::size_t a = 0; a < xs.size(); ++a) {
    for (std::size_t b = a + 1; b < xs.size(); ++b) d.push_back(distance(xs[a], xs[b]));
  }
  if (d.empty()) throw InvalidInputError("median heuristic needs >= 2 points");
  const auto mid = d.begin() + std::ptrdiff_t(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  double med = *mid;
  if (d.size() % 2 == 0) med = 0.5 * (med + *std::max_element(d.begin(), mid));
  if (!(med > 0.0)) throw DegenerateInputError("all latents coincide; kernel has zero variance");
  return 1.0 / (2.0 * med * med);
}

/// Linear-interpolated percentile (q in [0, 100]) of an unsorted sample.
inline double percentile(std::vector<double> xs, double q) {
  if (xs.empty()) throw InvalidInputError("percentile of an empty sample");
  std::sort(xs.begin(), xs.end());
  const double pos = q / 100.0 * double(xs.size() - 1);
  const auto lo = std::size_t(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (pos - double(lo)) * (xs[hi] - xs[lo]);
}

/// kPCA coordinates of one point.
inline Vector project(const AnomalyModel& m, std::span<const double> x) {
  if (x.size() != m.dim()) {
    throw ShapeError("latent has dimension " + std::to_string(x.size()) + ", model expects " +
                     std::to_string(m.dim()));
  }
  const std::size_t n = m.train.size();
  Vector kx(n);
  for (std::size_t j = 0; j < n; ++j) kx[j] = m.kernel(x, m.train[j]);
  double row_mean = 0.0;
  for (double v : kx) row_mean += v;
  row_mean /= double(n);
  for (std::size_t j = 0; j < n; ++j) {
    kx[j] += m.gram_mean - row_mean - m.gram_column_means[j];
  }
  return matvec_transposed(m.coefficients, kx);
}

inline double mahalanobis(const AnomalyModel& m, std::span<const double> s) {
  const Vector d = subtract(s, m.score_mean);
  const double q = dot(d, matvec(m.score_cov_inverse, d));
  return std::sqrt(std::max(q, 0.0));
}

inline double score(const AnomalyModel& m, std::span<const double> latent) {
  return mahalanobis(m, project(m, latent));
}

inline AnomalyModel fit(std::span<const Vector> latents, Kernel kernel, std::size_t k_components,
                        double percentile_q = kDefaultPercentile) {
  const std::size_t n = latents.size();
  if (n < 2) throw InvalidInputError("anomaly fit needs >= 2 samples");
  if (k_components < 1) throw InvalidInputError("k_components must be >= 1");
  if (n < k_components + 1) {
    throw InvalidInputError("anomaly fit needs >= k_components + 1 samples");
  }
  const std::size_t dim = latents.front().size();
  for (const auto& v : latents) {
    if (v.size() != dim) throw ShapeError("latents have different dimensions");
    require_finite(v, "latent");
  }
  if (kernel.type == KernelType::Rbf && !(kernel.gamma > 0.0)) {
    kernel.gamma = median_heuristic_gamma(latents);
  }

  AnomalyModel m;
  m.train.assign(latents.begin(), latents.end());
  m.kernel = kernel;

  Matrix gram(n, n);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a; b < n; ++b) gram(a, b) = gram(b, a) = kernel(latents[a], latents[b]);
  }
  m.gram_column_means.assign(n, 0.0);
  for (std::size_t a = 0; a < n; ++a) axpy(1.0 / double(n), gram.row(a), m.gram_column_means);
  for (double v : m.gram_column_means) m.gram_mean += v;
  m.gram_mean /= double(n);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      gram(a, b) += m.gram_mean - m.gram_column_means[a] - m.gram_column_means[b];
    }
  }

  const auto eig = sym_eig(gram);
  std::size_t k = 0;
  while (k < k_components && k < n && eig.values[k] > kEigenvalueFloor) ++k;
  if (k == 0) throw DegenerateInputError("centered Gram matrix has no usable variance");
  if (k < k_components) {
    m.warning = "reduced components: " + std::to_string(k) + " of " +
                std::to_string(k_components) + " eigenvalues exceed " +
                std::to_string(kEigenvalueFloor);
  }
  m.coefficients = Matrix(n, k);
  m.eigenvalues.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    m.eigenvalues[c] = eig.values[c];
    const double s = 1.0 / std::sqrt(eig.values[c]);
    for (std::size_t a = 0; a < n; ++a) m.coefficients(a, c) = eig.vectors(a, c) * s;
  }

  // Training scores are G̃·coefficients; column c equals √λ_c · v_c.
  std::vector<Vector> scores(n, Vector(k));
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t c = 0; c < k; ++c) scores[a][c] = eig.vectors(a, c) * std::sqrt(eig.values[c]);
  }
  m.score_mean.assign(k, 0.0);
  for (const auto& s : scores) axpy(1.0 / double(n), s, m.score_mean);
  Matrix cov(k, k);
  for (const auto& s : scores) {
    const Vector d = subtract(s, m.score_mean);
    add_outer(cov, 1.0 / double(n), d, d);
  }
  const double eps = 1e-8 * trace(cov) / double(k);
  for (std::size_t c = 0; c < k; ++c) cov(c, c) += eps;
  m.score_cov_inverse = spd_inverse(cov);

  std::vector<double> dist;
  dist.reserve(n);
  for (const auto& s : scores) dist.push_back(mahalanobis(m, s));
  m.threshold = percentile(std::move(dist), percentile_q);
  return m;
}

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const noexcept { return tp + fp + tn + fn; }
  double false_positive_rate() const { return fp + tn ? double(fp) / double(fp + tn) : 0.0; }
  double true_positive_rate() const { return tp + fn ? double(tp) / double(tp + fn) : 0.0; }
  double precision() const { return tp + fp ? double(tp) / double(tp + fp) : 0.0; }
  double accuracy() const { return total() ? double(tp + tn) / double(total()) : 0.0; }
};

struct DetectionReport {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;     ///< 1 = faulty
  std::vector<std::uint8_t> predicted;  ///< 1 = flagged
  ConfusionCounts counts;
  double threshold = 0.0;
};

/// Probability that a random positive outscores a random negative, ties
/// counting half. NaN when either class is empty.
inline double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw ShapeError("roc_auc: scores and labels differ in size");
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Midranks over tie groups.
  std::vector<double> rank(scores.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double r = 0.5 * double(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) rank[order[t]] = r;
    i = j + 1;
  }
  double pos = 0.0;
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i]) {
      pos += 1.0;
      rank_sum += rank[i];
    }
  }
  const double neg = double(labels.size()) - pos;
  if (pos == 0.0 || neg == 0.0) return std::nan("");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

inline DetectionReport detect(const AnomalyModel& m, std::span<const Vector> latents,
                              std::span<const std::uint8_t> labels) {
  if (latents.empty()) throw InvalidInputError("detect: no latents");
  if (latents.size() != labels.size()) throw ShapeError("detect: labels do not align with latents");
  DetectionReport r;
  r.threshold = m.threshold;
  r.labels.assign(labels.begin(), labels.end());
  for (std::size_t i = 0; i < latents.size(); ++i) {
    const double s = score(m, latents[i]);
    const bool flagged = s > m.threshold;
    r.scores.push_back(s);
    r.predicted.push_back(flagged ? 1 : 0);
    if (flagged) {
      ++(labels[i] ? r.counts.tp : r.counts.fp);
    } else {
      ++(labels[i] ? r.counts.fn : r.counts.tn);
    }
  }
  return r;
}

}  // namespace mmlip::anomaly
