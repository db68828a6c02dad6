#include <gtest/gtest.h>

#include <cmath>

#include "mmlip/fusion.hpp"
#include "mmlip/random.hpp"

using namespace mmlip;
using namespace mmlip::fusion;

namespace {

AttentionParams identity_params(std::size_t n, std::size_t d) {
  AttentionParams p;
  for (std::size_t i = 0; i < n; ++i) p.weights.push_back(Matrix::identity(d));
  return p;
}

AttentionParams random_params(Rng& rng, std::size_t n, std::size_t d) {
  AttentionParams p;
  for (std::size_t i = 0; i < n; ++i) {
    Matrix w(d, d);
    rng.fill_normal(w.data(), 0.7);
    p.weights.push_back(w);
  }
  return p;
}

std::vector<Vector> random_latents(Rng& rng, std::size_t n, std::size_t d) {
  std::vector<Vector> v(n, Vector(d));
  for (auto& x : v) rng.fill_normal(x);
  return v;
}

Matrix fd_jacobian(const FusionKind& kind, std::vector<Vector> latents, std::size_t k,
                   double h = 1e-5) {
  const std::size_t rows = fuse(kind, latents).u.size();
  Matrix jac(rows, latents[k].size());
  for (std::size_t c = 0; c < latents[k].size(); ++c) {
    const double x0 = latents[k][c];
    latents[k][c] = x0 + h;
    const Vector up = fuse(kind, latents).u;
    latents[k][c] = x0 - h;
    const Vector dn = fuse(kind, latents).u;
    latents[k][c] = x0;
    for (std::size_t r = 0; r < rows; ++r) jac(r, c) = (up[r] - dn[r]) / (2 * h);
  }
  return jac;
}

double relative_error(const Matrix& a, const Matrix& b) {
  return frobenius_norm(a - b) / std::max(1e-12, frobenius_norm(b));
}

}  // namespace

TEST(Fuse, SumAddsElementwise) {
  const std::vector<Vector> v{{1, 2}, {3, 4}};
  EXPECT_EQ(fuse(Sum{}, v).u, (Vector{4, 6}));
}

TEST(Fuse, ConcatStacksInOrder) {
  const std::vector<Vector> v{{1}, {2, 3}, {4}};
  EXPECT_EQ(fuse(Concat{}, v).u, (Vector{1, 2, 3, 4}));
}

TEST(Fuse, SumRejectsMismatchedDims) {
  const std::vector<Vector> v{{1, 2}, {3}};
  EXPECT_THROW(fuse(Sum{}, v), ShapeError);
  EXPECT_THROW(fuse(Sum{}, std::vector<Vector>{}), ShapeError);
}

TEST(Fuse, AttentionOrthogonalInputsGiveZero) {
  const std::vector<Vector> v{{1, 0}, {0, 1}};
  const auto out = fuse(Attention{identity_params(2, 2)}, v);
  EXPECT_EQ(out.scores(0, 1), 0.0);
  EXPECT_EQ(out.coefficients, (Vector{0, 0}));
  EXPECT_EQ(out.u, (Vector{0, 0, 0, 0}));
}

TEST(Fuse, AttentionParallelInputs) {
  const std::vector<Vector> v{{2, 0}, {3, 0}};
  const auto out = fuse(Attention{identity_params(2, 2)}, v);
  EXPECT_DOUBLE_EQ(out.scores(0, 1), 6.0);
  EXPECT_EQ(out.coefficients, (Vector{6, 6}));
  EXPECT_EQ(out.u, (Vector{12, 0, 18, 0}));
}

TEST(Fuse, AttentionThreeModalitiesAveragesOverOthers) {
  const std::vector<Vector> v{{1}, {2}, {3}};
  const auto out = fuse(Attention{identity_params(3, 1)}, v);
  // α₁ = (2 + 3)/2, α₂ = (2 + 6)/2, α₃ = (3 + 6)/2
  EXPECT_EQ(out.coefficients, (Vector{2.5, 4.0, 4.5}));
  EXPECT_EQ(out.u, (Vector{2.5, 8.0, 13.5}));
}

TEST(Fuse, AttentionFlags) {
  auto p = identity_params(2, 2);
  p.weights[0] = Matrix{{2, 0}, {0, 1}};
  p.weights[1] = Matrix{{2, 0}, {0, 1}};
  p.unit_norm_inputs = true;
  p.spectral_normalize = true;
  p.scale_by_sqrt_d = true;
  const std::vector<Vector> v{{5, 0}, {0.5, 0}};
  const auto out = fuse(Attention{p}, v);
  // Inputs become e₁, weights diag(1, 0.5), score 1/√2.
  const double a = 1.0 / std::sqrt(2.0);
  EXPECT_NEAR(out.scores(0, 1), a, 1e-12);
  EXPECT_NEAR(out.u[0], a, 1e-12);
  EXPECT_NEAR(out.u[2], a, 1e-12);
}

TEST(Fuse, AttentionZeroInputUnderUnitNorm) {
  auto p = identity_params(2, 2);
  p.unit_norm_inputs = true;
  const std::vector<Vector> v{{0, 0}, {1, 0}};
  EXPECT_THROW(fuse(Attention{p}, v), DegenerateInputError);
}

TEST(Fuse, AttentionValidation) {
  EXPECT_THROW(fuse(Attention{identity_params(1, 2)}, std::vector<Vector>{{1, 0}}),
               InvalidInputError);
  EXPECT_THROW(fuse(Attention{identity_params(2, 2)}, std::vector<Vector>{{1, 0}, {1}}),
               ShapeError);
  EXPECT_THROW(fuse(Attention{identity_params(2, 2)}, std::vector<Vector>{{1, 0}}),
               ShapeError);
  auto p = identity_params(2, 2);
  p.lambda_reg = -1;
  EXPECT_THROW(fuse(Attention{p}, std::vector<Vector>{{1, 0}, {0, 1}}), InvalidInputError);
}

TEST(SpectralNormalization, TopSingularValueIsOne) {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    Matrix w(4, 4);
    rng.fill_normal(w.data(), 3.0);
    EXPECT_NEAR(spectral_norm(spectrally_normalized(w), 1e-13, 100000), 1.0, 1e-9);
  }
  EXPECT_EQ(spectrally_normalized(Matrix(2, 2)), Matrix(2, 2));
}

TEST(AttentionJacobian, ZeroWhenOtherLatentIsZero) {
  const std::vector<Vector> v{{1, 0}, {0, 0}};
  EXPECT_EQ(attention_jacobian(identity_params(2, 2), v, 0), Matrix(4, 2));
}

TEST(AttentionJacobian, OrthogonalInputs) {
  const std::vector<Vector> v{{1, 0}, {0, 1}};
  const Matrix j = attention_jacobian(identity_params(2, 2), v, 0);
  // Stacked blocks ∂(α₁v₁)/∂v₁ and ∂(α₂v₂)/∂v₁.
  EXPECT_EQ(j, (Matrix{{0, 1}, {0, 0}, {0, 0}, {0, 1}}));
  EXPECT_LT(relative_error(j, fd_jacobian(Attention{identity_params(2, 2)}, v, 0)), 1e-9);
}

TEST(AttentionJacobian, MatchesFiniteDifferences) {
  Rng rng(11);
  for (int t = 0; t < 20; ++t) {
    auto p = random_params(rng, 3, 4);
    p.spectral_normalize = t % 2 == 1;
    const auto v = random_latents(rng, 3, 4);
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_LT(relative_error(attention_jacobian(p, v, k), fd_jacobian(Attention{p}, v, k)),
                1e-6);
    }
  }
}

TEST(AttentionJacobian, RejectsUnsupportedFlags) {
  auto p = identity_params(2, 2);
  p.unit_norm_inputs = true;
  const std::vector<Vector> v{{1, 0}, {0, 1}};
  EXPECT_THROW(attention_jacobian(p, v, 0), UnsupportedConfigurationError);
  p.unit_norm_inputs = false;
  p.scale_by_sqrt_d = true;
  EXPECT_THROW(attention_jacobian(p, v, 0), UnsupportedConfigurationError);
  p.scale_by_sqrt_d = false;
  EXPECT_THROW(attention_jacobian(p, v, 2), InvalidInputError);
}

TEST(AttentionReg, TermValues) {
  AttentionParams p;
  p.weights = {Matrix::identity(2)};
  EXPECT_EQ(attention_reg_term(p), 0.0);
  p.lambda_reg = 0.5;
  EXPECT_DOUBLE_EQ(attention_reg_term(p), 1.0);
  p.weights = {Matrix{{3, 4}, {0, 0}}};
  p.lambda_reg = 0.1;
  EXPECT_DOUBLE_EQ(attention_reg_term(p), 2.5);
}

TEST(AttentionReg, GradientValuesAndFiniteDifferences) {
  AttentionParams p = identity_params(2, 2);
  EXPECT_EQ(attention_reg_gradient(p, 0), Matrix(2, 2));
  p.lambda_reg = 0.5;
  EXPECT_EQ(attention_reg_gradient(p, 1), Matrix::identity(2));
  EXPECT_THROW(attention_reg_gradient(p, 2), InvalidInputError);

  Rng rng(12);
  p = random_params(rng, 2, 3);
  p.lambda_reg = rng.uniform(0.01, 2.0);
  const double h = 1e-6;
  for (std::size_t i = 0; i < 2; ++i) {
    const Matrix g = attention_reg_gradient(p, i);
    for (std::size_t e = 0; e < p.weights[i].size(); ++e) {
      const double x0 = p.weights[i].data()[e];
      p.weights[i].data()[e] = x0 + h;
      const double up = attention_reg_term(p);
      p.weights[i].data()[e] = x0 - h;
      const double dn = attention_reg_term(p);
      p.weights[i].data()[e] = x0;
      EXPECT_NEAR((up - dn) / (2 * h), g.data()[e], 1e-8 * std::max(1.0, std::abs(g.data()[e])));
    }
  }
}

TEST(FusionJacobian, SumAndConcatStructure) {
  const std::vector<Vector> v{{1, 2}, {3, 4}};
  EXPECT_EQ(fusion_jacobian(Sum{}, v, 0), Matrix::identity(2));
  EXPECT_EQ(fusion_jacobian(Concat{}, v, 1), (Matrix{{0, 0}, {0, 0}, {1, 0}, {0, 1}}));
  EXPECT_THROW(fusion_jacobian(Sum{}, v, 2), InvalidInputError);
}

TEST(FusionJacobian, AllKindsMatchFiniteDifferences) {
  Rng rng(13);
  const auto v = random_latents(rng, 3, 3);
  const std::vector<FusionKind> kinds{Sum{}, Concat{}, Attention{random_params(rng, 3, 3)}};
  for (const auto& kind : kinds) {
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_LT(relative_error(fusion_jacobian(kind, v, k), fd_jacobian(kind, v, k)), 1e-6)
          << kind_name(kind);
    }
  }
}
