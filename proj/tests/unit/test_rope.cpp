#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "extembed/errors.hpp"
#include "extembed/rope.hpp"
#include "helpers.hpp"

using namespace extembed;
using extembed::testing::random_vector;

TEST(Rope, FrequenciesStartAtOneAndDecrease) {
  const auto f = RoPEFrequencies::standard(64);
  ASSERT_EQ(f.theta.size(), 32u);
  EXPECT_EQ(f.theta[0], 1.0);
  for (std::size_t j = 1; j < f.theta.size(); ++j) EXPECT_LT(f.theta[j], f.theta[j - 1]);
  EXPECT_NEAR(f.theta[1], std::pow(10000.0, -2.0 / 64.0), 1e-15);
}

TEST(Rope, OddDimensionRejected) {
  EXPECT_THROW(RoPEFrequencies::standard(3), DimensionError);
  const auto f = RoPEFrequencies::standard(4);
  const std::vector<double> h{1, 2, 3};
  EXPECT_THROW(apply_rope(h, 1.0, f), DimensionError);
}

TEST(Rope, ZeroPhaseIsIdentity) {
  Rng rng(1);
  const auto f = RoPEFrequencies::standard(16);
  const auto h = random_vector(16, rng);
  EXPECT_EQ(apply_rope(h, 0.0, f), h);
}

TEST(Rope, QuarterTurnInTwoDimensions) {
  RoPEFrequencies f{10000.0, 2, {1.0}};
  const std::vector<double> h{1.0, 0.0};
  const auto r = apply_rope(h, std::numbers::pi / 2, f);
  EXPECT_NEAR(r[0], 0.0, 1e-15);
  EXPECT_NEAR(r[1], 1.0, 1e-15);
}

TEST(Rope, RotationPreservesNorm) {
  Rng rng(2);
  const auto f = RoPEFrequencies::standard(32);
  for (int t = 0; t < 200; ++t) {
    const auto h = random_vector(32, rng);
    const double m = rng.uniform(-5000.0, 5000.0);
    const auto r = apply_rope(h, m, f);
    double a = 0, b = 0;
    for (std::size_t i = 0; i < h.size(); ++i) {
      a += h[i] * h[i];
      b += r[i] * r[i];
    }
    EXPECT_NEAR(std::sqrt(a), std::sqrt(b), 1e-9);
  }
}

TEST(Rope, EqualPositionsGivePlainDot) {
  Rng rng(3);
  const auto f = RoPEFrequencies::standard(8);
  const auto q = random_vector(8, rng), k = random_vector(8, rng);
  double dot = 0;
  for (std::size_t i = 0; i < 8; ++i) dot += q[i] * k[i];
  EXPECT_NEAR(attention_score(q, k, 17.0, 17.0, f), dot, 1e-12);
}

TEST(Rope, HandComputedScore) {
  RoPEFrequencies f{10000.0, 2, {1.0}};
  const std::vector<double> q{1.0, 0.0}, k{1.0, 0.0};
  EXPECT_NEAR(attention_score(q, k, 3.0, 1.0, f), std::cos(2.0), 1e-12);
  EXPECT_NEAR(attention_score(q, k, 3.0, 1.0, f), -0.41615, 1e-5);
}

TEST(Rope, MismatchedLengthsRejected) {
  const auto f = RoPEFrequencies::standard(4);
  const std::vector<double> q{1, 2, 3, 4}, k{1, 2};
  EXPECT_THROW(attention_score(q, k, 0, 0, f), DimensionError);
}

TEST(Rope, ScoreDependsOnlyOnOffset) {
  Rng rng(4);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t d = 2 * (1 + rng.below(32));
    const auto f = RoPEFrequencies::standard(d);
    const auto q = random_vector(d, rng), k = random_vector(d, rng);
    const double m = static_cast<double>(rng.below(4096)), n = static_cast<double>(rng.below(4096));
    const double delta = static_cast<double>(rng.below(1001));
    const double a = attention_score(q, k, m, n, f);
    EXPECT_LT(std::abs(a - attention_score(q, k, m + delta, n + delta, f)), 1e-6);
    EXPECT_NEAR(a, relative_attention_score(q, k, m - n, f), 1e-9);
  }
}
