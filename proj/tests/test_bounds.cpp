#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>

#include "mmlip/bounds.hpp"
#include "mmlip/random.hpp"

using namespace mmlip;
using namespace mmlip::bounds;

TEST(DecoderGradBound, Examples) {
  EXPECT_DOUBLE_EQ(decoder_grad_bound({1, 1, 1, 1, 1, 1}), 6.0);
  EXPECT_DOUBLE_EQ(decoder_grad_bound({}), 0.0);
  EXPECT_DOUBLE_EQ(decoder_grad_bound({2, 3, 4, 1, 0.5, 2}), 24.0);
  EXPECT_THROW(decoder_grad_bound({-1, 1, 1, 1, 1, 1}), InvalidInputError);
}

TEST(EncoderGradBound, Examples) {
  EncoderBoundInputs in{{{1, 1}}, 1, 1, 1, 1};
  EXPECT_DOUBLE_EQ(encoder_grad_bound(in), 8.0);
  in.decoders.push_back({1, 1});
  EXPECT_DOUBLE_EQ(encoder_grad_bound(in), 16.0);
  in.decoders.clear();
  EXPECT_THROW(encoder_grad_bound(in), InvalidInputError);
  in.decoders = {{1, -1}};
  EXPECT_THROW(encoder_grad_bound(in), InvalidInputError);
}

TEST(EncoderGradBound, MixedValuesTermByTerm) {
  const EncoderBoundInputs in{{{2, 3}, {0.5, 7}}, 1.5, 0.25, 4, 2};
  double expected = 0.0;
  for (const auto& [ld, lg] : std::vector<std::pair<double, double>>{{2, 3}, {0.5, 7}}) {
    const double first = ld * in.b_agg;
    const double second = ld * ld * in.b_agg * in.l_agg_func;
    const double third = in.c_input * lg * in.b_agg;
    const double fourth = in.c_input * ld * in.l_agg_grad_k;
    expected += first + second + third + fourth;
  }
  EXPECT_NEAR(encoder_grad_bound(in), 2 * expected, 1e-12);
}

TEST(AggregationBounds, Examples) {
  auto b = aggregation_bounds(std::vector<double>{3, 4});
  EXPECT_DOUBLE_EQ(b.l_concat, 5.0);
  EXPECT_DOUBLE_EQ(b.l_sum, 7.0);
  b = aggregation_bounds(std::vector<double>{7, 0});
  EXPECT_DOUBLE_EQ(b.l_concat, 7.0);
  EXPECT_DOUBLE_EQ(b.l_sum, 7.0);
  b = aggregation_bounds(std::vector<double>{1, 1, 1});
  EXPECT_DOUBLE_EQ(b.l_concat, std::sqrt(3.0));
  EXPECT_DOUBLE_EQ(b.l_sum, 3.0);
  EXPECT_THROW(aggregation_bounds(std::vector<double>{1, -1}), InvalidInputError);
}

TEST(AggregationBounds, ConcatNeverExceedsSum) {
  Rng rng(21);
  for (int t = 0; t < 2000; ++t) {
    std::vector<double> l(1 + rng.index(6));
    for (double& x : l) x = rng.uniform(0, 1) < 0.4 ? 0.0 : rng.uniform(1e-3, 10);
    const auto b = aggregation_bounds(l);
    EXPECT_LE(b.l_concat, b.l_sum * (1 + 1e-15));
    const auto nonzero = std::count_if(l.begin(), l.end(), [](double x) { return x != 0; });
    EXPECT_EQ(std::abs(b.l_concat - b.l_sum) <= 1e-12, nonzero <= 1);
  }
}

TEST(AttentionBounds, Examples) {
  EXPECT_DOUBLE_EQ(attention_func_bound(1, 1), 4.0);
  EXPECT_DOUBLE_EQ(attention_func_bound(0, 3), 0.0);
  EXPECT_DOUBLE_EQ(attention_func_bound(2, 0.5), 4.0);
  EXPECT_THROW(attention_func_bound(-1, 1), InvalidInputError);
  EXPECT_DOUBLE_EQ(attention_grad_bound(1, 1, 1), 1.0);
  EXPECT_DOUBLE_EQ(attention_grad_bound(2, 2, 3), 48.0);
  EXPECT_THROW(attention_grad_bound(1, 1, -1), InvalidInputError);
  EXPECT_DOUBLE_EQ(default_attention_grad_constant(3), 12.0);
}

TEST(MlpFuncLipschitz, Examples) {
  EXPECT_NEAR(mlp_func_lipschitz(std::vector<Matrix>{Matrix{{2, 0}, {0, 2}}},
                                 std::vector<double>{1}),
              2.0, 1e-9);
  EXPECT_NEAR(mlp_func_lipschitz(std::vector<Matrix>{Matrix{{3}}, Matrix{{0.5}}},
                                 std::vector<double>{1, 1}),
              1.5, 1e-12);
  EXPECT_THROW(mlp_func_lipschitz(std::vector<Matrix>{Matrix{{1}}}, std::vector<double>{}),
               InvalidInputError);
  EXPECT_THROW(mlp_func_lipschitz(std::vector<Matrix>{}, std::vector<double>{}),
               InvalidInputError);
}

TEST(MlpFuncLipschitz, MatchesSvdProduct) {
  Rng rng(22);
  std::vector<Matrix> layers{Matrix(5, 3), Matrix(4, 5), Matrix(2, 4)};
  double oracle = 1.0;
  for (auto& w : layers) {
    rng.fill_normal(w.data());
    Eigen::MatrixXd e(w.rows(), w.cols());
    for (std::size_t r = 0; r < w.rows(); ++r)
      for (std::size_t c = 0; c < w.cols(); ++c) e(Eigen::Index(r), Eigen::Index(c)) = w(r, c);
    oracle *= Eigen::JacobiSVD<Eigen::MatrixXd>(e).singularValues()(0);
  }
  EXPECT_NEAR(mlp_func_lipschitz(layers, std::vector<double>{1, 1, 1}), oracle, 1e-6 * oracle);
}

TEST(MaxObservedNorm, LargestEuclideanNorm) {
  const std::vector<Vector> s{{3, 4}, {1, 1}, {0, -6}};
  EXPECT_DOUBLE_EQ(max_observed_norm(s), 6.0);
  EXPECT_EQ(max_observed_norm(std::vector<Vector>{}), 0.0);
}
