#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "dald/error.hpp"
#include "dald/feature_pool.hpp"
#include "dald/random.hpp"

namespace dald {

enum class BandwidthRule { kFixed, kMedianHeuristic };

struct KernelConfig {
  BandwidthRule rule = BandwidthRule::kMedianHeuristic;
  double sigma = 1.0;          // used by kFixed, and as the fallback for degenerate subsamples
  Index subsample = 1024;      // used by kMedianHeuristic

  static KernelConfig fixed(double sigma) { return {BandwidthRule::kFixed, sigma, 1024}; }
  static KernelConfig median(Index subsample = 1024) { return {BandwidthRule::kMedianHeuristic, 1.0, subsample}; }

  void validate() const {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ConfigError("kernel bandwidth must be > 0");
    if (rule == BandwidthRule::kMedianHeuristic && subsample < 2) {
      throw ConfigError("median heuristic subsample must be >= 2");
    }
  }
};

/// Squared Euclidean distance, accumulated coordinate-wise in double.
template <class A, class B>
double squared_distance(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  DALD_REQUIRE(a.size() == b.size(), "feature dimension mismatch");
  double acc = 0.0;
  for (Eigen::Index j = 0; j < a.size(); ++j) {
    const double d = static_cast<double>(a(j)) - static_cast<double>(b(j));
    acc += d * d;
  }
  return acc;
}

/// k(a, b) = exp(-||a - b||^2 / sigma^2).
template <class A, class B>
double rbf(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b, double sigma) {
  DALD_REQUIRE(sigma > 0.0, "kernel bandwidth must be > 0");
  return std::exp(-squared_distance(a, b) / (sigma * sigma));
}

/// Similarities between one candidate and every row of `pool`.
template <class A>
Eigen::VectorXd kernel_row(const Eigen::MatrixBase<A>& candidate, const FeatureMatrix& pool, double sigma) {
  DALD_REQUIRE(candidate.size() == pool.cols(), "feature dimension mismatch");
  DALD_REQUIRE(sigma > 0.0, "kernel bandwidth must be > 0");
  Eigen::VectorXd out(pool.rows());
  const double inv = 1.0 / (sigma * sigma);
  for (Eigen::Index i = 0; i < pool.rows(); ++i) out[i] = std::exp(-squared_distance(candidate, pool.row(i)) * inv);
  return out;
}

/// Same, restricted to the listed rows (entry i corresponds to rows[i]).
template <class A>
Eigen::VectorXd kernel_row(const Eigen::MatrixBase<A>& candidate, const FeatureMatrix& pool,
                           std::span<const Index> rows, double sigma) {
  DALD_REQUIRE(candidate.size() == pool.cols(), "feature dimension mismatch");
  DALD_REQUIRE(sigma > 0.0, "kernel bandwidth must be > 0");
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  const double inv = 1.0 / (sigma * sigma);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out[static_cast<Eigen::Index>(i)] = std::exp(-squared_distance(candidate, pool.row(rows[i])) * inv);
  }
  return out;
}

/// Median pairwise Euclidean distance over a seeded subsample of `rows`.
///
/// If `rows` has at most `subsample` entries all of them are used. When more
/// than half of the pairs coincide, the median of the nonzero distances is
/// returned instead; a subsample of one repeated point throws.
inline double median_bandwidth(const FeatureMatrix& features, std::span<const Index> rows, Index subsample,
                               std::uint64_t seed) {
  if (subsample < 2) throw ConfigError("median heuristic subsample must be >= 2");
  std::vector<Index> picked(rows.begin(), rows.end());
  if (static_cast<Index>(picked.size()) > subsample) {
    Engine rng = make_engine({stream::kBandwidth, seed});
    // Partial Fisher-Yates: first `subsample` entries become a uniform draw.
    for (Index i = 0; i < subsample; ++i) {
      std::uniform_int_distribution<Index> pick(i, static_cast<Index>(picked.size()) - 1);
      std::swap(picked[static_cast<std::size_t>(i)], picked[static_cast<std::size_t>(pick(rng))]);
    }
    picked.resize(static_cast<std::size_t>(subsample));
  }
  if (picked.size() < 2) throw DegenerateBandwidth("bandwidth subsample has fewer than two points");

  std::vector<double> dist;
  dist.reserve(picked.size() * (picked.size() - 1) / 2);
  for (std::size_t i = 0; i < picked.size(); ++i) {
    for (std::size_t j = i + 1; j < picked.size(); ++j) {
      dist.push_back(std::sqrt(squared_distance(features.row(picked[i]), features.row(picked[j]))));
    }
  }
  auto median_of = [](std::vector<double>& v) {
    const auto n = v.size();
    auto hi = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
    std::nth_element(v.begin(), hi, v.end());
    if (n % 2 == 1) return *hi;
    const double upper = *hi;
    const double lower = *std::max_element(v.begin(), hi);
    return 0.5 * (lower + upper);
  };
  double med = median_of(dist);
  if (med > 0.0) return med;
  std::erase_if(dist, [](double d) { return d == 0.0; });
  if (dist.empty()) throw DegenerateBandwidth("all subsampled features are identical");
  return median_of(dist);
}

inline double median_bandwidth(const FeaturePool& pool, Index subsample, std::uint64_t seed) {
  std::vector<Index> rows(static_cast<std::size_t>(pool.size()));
  std::iota(rows.begin(), rows.end(), Index{0});
  return median_bandwidth(pool.features(), rows, subsample, seed);
}

/// Resolves the configured rule to a concrete sigma over `rows`. A degenerate
/// median falls back to the configured fixed sigma.
inline double resolve_bandwidth(const KernelConfig& config, const FeatureMatrix& features,
                                std::span<const Index> rows, std::uint64_t seed) {
  config.validate();
  if (config.rule == BandwidthRule::kFixed) return config.sigma;
  try {
    return median_bandwidth(features, rows, config.subsample, seed);
  } catch (const DegenerateBandwidth&) {
    return config.sigma;
  }
}

}  // namespace dald
