#include <gtest/gtest.h>

#include <cmath>

#include "mmlip/anomaly.hpp"
#include "mmlip/random.hpp"

using namespace mmlip;
using namespace mmlip::anomaly;

namespace {

std::vector<Vector> gaussian_cloud(Rng& rng, std::size_t n, std::size_t d, double shift = 0.0) {
  std::vector<Vector> xs(n, Vector(d));
  for (auto& x : xs) {
    rng.fill_normal(x);
    for (double& v : x) v += shift;
  }
  return xs;
}

}  // namespace

TEST(Fit, LinearKernelMatchesPca) {
  Rng rng(51);
  auto xs = gaussian_cloud(rng, 60, 4);
  // Anisotropic and centered.
  for (auto& x : xs) {
    x[0] *= 3;
    x[1] *= 2;
  }
  Vector mean(4, 0.0);
  for (const auto& x : xs) axpy(1.0 / 60.0, x, mean);
  for (auto& x : xs) x = subtract(x, mean);

  const auto m = fit(xs, {KernelType::Linear}, 3);
  ASSERT_EQ(m.components(), 3u);
  Matrix cov(4, 4);
  for (const auto& x : xs) add_outer(cov, 1.0, x, x);
  const auto eig = sym_eig(cov);
  for (const auto& x : xs) {
    const Vector p = project(m, x);
    for (std::size_t c = 0; c < 3; ++c) {
      const double oracle = dot(x, eig.vectors.col(c));
      EXPECT_NEAR(std::abs(p[c]), std::abs(oracle), 1e-8);
    }
  }
}

TEST(Fit, IdenticalLatentsAreDegenerate) {
  const std::vector<Vector> same(10, Vector{1.0, 2.0});
  EXPECT_THROW(fit(same, {KernelType::Rbf}, 2), DegenerateInputError);
  EXPECT_THROW(fit(same, {KernelType::Linear}, 2), DegenerateInputError);
}

TEST(Fit, TooFewSamples) {
  EXPECT_THROW(fit(std::vector<Vector>{{1.0}}, {KernelType::Linear}, 1), InvalidInputError);
  EXPECT_THROW(fit(std::vector<Vector>{{1.0}, {2.0}, {3.0}}, {KernelType::Linear}, 3),
               InvalidInputError);
}

TEST(Fit, RankDeficientReducesComponents) {
  Rng rng(52);
  std::vector<Vector> xs;
  for (int k = 0; k < 30; ++k) {
    const double t = rng.normal();
    xs.push_back({t, 2 * t, -t});
  }
  const auto m = fit(xs, {KernelType::Linear}, 3);
  EXPECT_EQ(m.components(), 1u);
  EXPECT_FALSE(m.warning.empty());
  for (double l : m.eigenvalues) EXPECT_GT(l, kEigenvalueFloor);
}

TEST(Fit, FivePercentOfCleanDataExceedThreshold) {
  Rng rng(53);
  const auto xs = gaussian_cloud(rng, 200, 3);
  const auto m = fit(xs, {KernelType::Rbf}, 4);
  std::size_t over = 0;
  for (const auto& x : xs) over += score(m, x) > m.threshold ? 1 : 0;
  EXPECT_NEAR(double(over), 0.05 * 200, 1.0);
}

TEST(Fit, HeldOutFalsePositiveRate) {
  Rng rng(54);
  const auto train = gaussian_cloud(rng, 400, 3);
  const auto held = gaussian_cloud(rng, 2000, 3);
  const auto m = fit(train, {KernelType::Rbf}, 8);
  std::size_t over = 0;
  for (const auto& x : held) over += score(m, x) > m.threshold ? 1 : 0;
  const double fpr = double(over) / double(held.size());
  EXPECT_GE(fpr, 0.02);
  EXPECT_LE(fpr, 0.08);
}

TEST(Fit, RbfScoresAreTranslationInvariant) {
  Rng rng(55);
  const auto xs = gaussian_cloud(rng, 50, 3);
  const auto probe = gaussian_cloud(rng, 10, 3);
  const auto m = fit(xs, {KernelType::Rbf}, 5);
  auto shifted = xs;
  const Vector c{10, -4, 0.5};
  for (auto& x : shifted) x = add(x, c);
  const auto ms = fit(shifted, {KernelType::Rbf}, 5);
  for (const auto& p : probe) {
    EXPECT_NEAR(score(m, p), score(ms, add(p, c)), 1e-8);
  }
}

TEST(Score, ZeroAtTheMeanAndEuclideanUnderIdentity) {
  Rng rng(56);
  auto m = fit(gaussian_cloud(rng, 40, 2), {KernelType::Rbf}, 3);
  EXPECT_EQ(mahalanobis(m, m.score_mean), 0.0);
  m.score_cov_inverse = Matrix::identity(m.components());
  const Vector s{1.0, -2.0, 2.0};
  EXPECT_NEAR(mahalanobis(m, add(m.score_mean, s)), 3.0, 1e-12);
  EXPECT_THROW(score(m, Vector{1.0}), ShapeError);
}

TEST(Score, MatchesExplicitQuadraticForm) {
  Rng rng(57);
  const auto m = fit(gaussian_cloud(rng, 80, 3), {KernelType::Rbf}, 4);
  const auto probe = gaussian_cloud(rng, 5, 3, 0.5);
  for (const auto& x : probe) {
    const Vector d = subtract(project(m, x), m.score_mean);
    double q = 0.0;
    for (std::size_t a = 0; a < d.size(); ++a)
      for (std::size_t b = 0; b < d.size(); ++b) q += d[a] * m.score_cov_inverse(a, b) * d[b];
    EXPECT_NEAR(score(m, x), std::sqrt(q), 1e-10);
  }
}

TEST(Detect, InfiniteThresholdFlagsNothing) {
  Rng rng(58);
  auto m = fit(gaussian_cloud(rng, 30, 2), {KernelType::Rbf}, 3);
  m.threshold = std::numeric_limits<double>::infinity();
  const auto xs = gaussian_cloud(rng, 20, 2);
  const std::vector<std::uint8_t> labels(20, 0);
  const auto r = detect(m, xs, labels);
  EXPECT_EQ(r.counts.fp, 0u);
  EXPECT_EQ(r.counts.tn, 20u);
  EXPECT_EQ(r.counts.total(), 20u);
}

TEST(Detect, SeparatedScoresGivePerfectConfusion) {
  Rng rng(59);
  const auto train = gaussian_cloud(rng, 100, 2);
  const auto m = fit(train, {KernelType::Linear}, 2);
  std::vector<Vector> xs{{0.0, 0.0}, {0.1, -0.1}, {40.0, 40.0}, {-50.0, 30.0}};
  const std::vector<std::uint8_t> labels{0, 0, 1, 1};
  const auto r = detect(m, xs, labels);
  EXPECT_EQ(r.counts.tp, 2u);
  EXPECT_EQ(r.counts.tn, 2u);
  EXPECT_EQ(r.counts.fp + r.counts.fn, 0u);
  EXPECT_DOUBLE_EQ(roc_auc(r.scores, r.labels), 1.0);
  EXPECT_THROW(detect(m, std::vector<Vector>{}, std::vector<std::uint8_t>{}), InvalidInputError);
  EXPECT_THROW(detect(m, xs, std::vector<std::uint8_t>{0}), ShapeError);
}

TEST(RocAuc, TiesAndEmptyClasses) {
  const std::vector<double> s{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(roc_auc(s, std::vector<std::uint8_t>{0, 0, 1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(roc_auc(s, std::vector<std::uint8_t>{1, 1, 0, 0}), 0.0);
  EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{1, 1, 1, 1}, std::vector<std::uint8_t>{0, 1, 0, 1}), 0.5);
  EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{1, 2, 2, 3}, std::vector<std::uint8_t>{0, 1, 0, 1}), 0.875);
  EXPECT_TRUE(std::isnan(roc_auc(s, std::vector<std::uint8_t>{0, 0, 0, 0})));
}

TEST(Percentile, LinearInterpolation) {
  EXPECT_DOUBLE_EQ(percentile({1, 2, 3, 4, 5}, 50), 3.0);
  EXPECT_DOUBLE_EQ(percentile({1, 2, 3, 4}, 50), 2.5);
  EXPECT_DOUBLE_EQ(percentile({5, 1}, 95), 4.8);
  EXPECT_THROW(percentile({}, 50), InvalidInputError);
}

TEST(Kernel, MedianHeuristic) {
  const std::vector<Vector> xs{{0.0}, {1.0}, {3.0}};
  // Pairwise distances 1, 2, 3: median 2.
  EXPECT_DOUBLE_EQ(median_heuristic_gamma(xs), 1.0 / 8.0);
  EXPECT_EQ(parse_kernel(kernel_name(KernelType::Linear)), KernelType::Linear);
  EXPECT_THROW(parse_kernel("poly"), InvalidInputError);
}
