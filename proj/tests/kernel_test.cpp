#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "dald/kernel.hpp"
#include "test_util.hpp"

namespace dald {
namespace {

TEST(Rbf, IdenticalPointsGiveOne) {
  const Eigen::Vector3d a(0.3, -1.0, 2.0);
  EXPECT_EQ(rbf(a, a, 0.7), 1.0);
}

TEST(Rbf, OneBandwidthApartGivesExpMinusOne) {
  const double sigma = 1.7;
  EXPECT_NEAR(rbf(Eigen::Vector2d(0, 0), Eigen::Vector2d(sigma, 0), sigma), 0.36787944117144233, 1e-15);
}

TEST(Rbf, SymmetricAndBounded) {
  const auto x = test::random_points(2000, 5, 4);
  for (Index i = 0; i < 1000; ++i) {
    const double ab = rbf(x.row(2 * i), x.row(2 * i + 1), 0.9);
    EXPECT_EQ(ab, rbf(x.row(2 * i + 1), x.row(2 * i), 0.9));
    EXPECT_GT(ab, 0.0);
    EXPECT_LE(ab, 1.0);
  }
}

TEST(Rbf, MonotoneInDistanceAndBandwidth) {
  const Eigen::Vector2d o(0, 0);
  double prev = 1.0;
  for (int k = 1; k < 20; ++k) {
    const double v = rbf(o, Eigen::Vector2d(0.1 * k, 0.0), 1.0);
    EXPECT_LT(v, prev);
    prev = v;
  }
  const auto x = test::random_points(200, 3, 9);
  for (Index i = 0; i + 1 < x.rows(); i += 2) {
    EXPECT_LE(rbf(x.row(i), x.row(i + 1), 0.5), rbf(x.row(i), x.row(i + 1), 1.0));
  }
}

TEST(Rbf, DimensionMismatchIsContractViolation) {
  EXPECT_THROW(rbf(Eigen::Vector2d(0, 0), Eigen::Vector3d(0, 0, 0), 1.0), ContractViolation);
  EXPECT_THROW(rbf(Eigen::Vector2d(0, 0), Eigen::Vector2d(0, 0), 0.0), ContractViolation);
}

TEST(MedianBandwidth, ThreeCollinearPoints) {
  // Pairwise distances {1, 1, 2}: median 1.
  const auto pool = test::line_pool({0.0, 1.0, 2.0});
  EXPECT_DOUBLE_EQ(median_bandwidth(pool, 3, 0), 1.0);
}

TEST(MedianBandwidth, IdenticalPointsAreDegenerate) {
  const auto pool = test::line_pool({4.0, 4.0, 4.0, 4.0});
  EXPECT_THROW(median_bandwidth(pool, 4, 0), DegenerateBandwidth);
}

TEST(MedianBandwidth, ScalesWithFeatures) {
  const auto x = test::random_points(300, 4, 1);
  const auto rows = test::iota_indices(300);
  const double base = median_bandwidth(x, rows, 100, 5);
  const FeatureMatrix scaled = 3.5 * x;
  EXPECT_NEAR(median_bandwidth(scaled, rows, 100, 5), 3.5 * base, 1e-12 * base);
}

TEST(MedianBandwidth, SeededSubsampleIsReproducible) {
  const auto x = test::random_points(500, 2, 2);
  const auto rows = test::iota_indices(500);
  EXPECT_EQ(median_bandwidth(x, rows, 64, 3), median_bandwidth(x, rows, 64, 3));
  EXPECT_THROW(median_bandwidth(x, rows, 1, 3), ConfigError);
}

TEST(ResolveBandwidth, DegenerateMedianFallsBackToFixed) {
  const auto pool = test::line_pool({1.0, 1.0});
  auto cfg = KernelConfig::median(16);
  cfg.sigma = 0.25;
  EXPECT_EQ(resolve_bandwidth(cfg, pool.features(), test::iota_indices(2), 0), 0.25);
  EXPECT_EQ(resolve_bandwidth(KernelConfig::fixed(2.0), pool.features(), test::iota_indices(2), 0), 2.0);
}

TEST(KernelRow, EntryOfIdenticalRowIsOne) {
  const auto x = test::random_points(10, 3, 6);
  const auto row = kernel_row(x.row(3), x, 1.1);
  EXPECT_EQ(row.size(), 10);
  EXPECT_EQ(row[3], 1.0);
}

TEST(KernelRow, SingleRowPool) {
  const auto x = test::random_points(2, 3, 6);
  const FeatureMatrix one = x.topRows(1);
  const auto row = kernel_row(x.row(1), one, 0.8);
  ASSERT_EQ(row.size(), 1);
  EXPECT_EQ(row[0], rbf(x.row(1), x.row(0), 0.8));
}

TEST(KernelRow, MatchesScalarLoop) {
  const auto x = test::random_points(1001, 6, 8);
  const FeatureMatrix pool = x.bottomRows(1000);
  const auto row = kernel_row(x.row(0), pool, 1.3);
  for (Index i = 0; i < 1000; ++i) {
    double d2 = 0.0;
    for (Index j = 0; j < 6; ++j) d2 += (x(0, j) - pool(i, j)) * (x(0, j) - pool(i, j));
    const double expected = std::exp(-d2 / (1.3 * 1.3));
    EXPECT_NEAR(row[i], expected, 1e-12 * expected);
  }
}

TEST(KernelRow, PermutationEquivariant) {
  const auto x = test::random_points(50, 3, 10);
  std::vector<Index> perm = test::iota_indices(50);
  std::mt19937_64 rng(1);
  std::shuffle(perm.begin(), perm.end(), rng);
  FeatureMatrix permuted(50, 3);
  for (Index i = 0; i < 50; ++i) permuted.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
  const Eigen::Vector3d c(0.1, 0.2, -0.3);
  const auto a = kernel_row(c, x, 1.0);
  const auto b = kernel_row(c, permuted, 1.0);
  for (Index i = 0; i < 50; ++i) EXPECT_EQ(b[i], a[perm[static_cast<std::size_t>(i)]]);
}

}  // namespace
}  // namespace dald
