#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "dald/error.hpp"
#include "dald/feature_pool.hpp"
#include "dald/head.hpp"
#include "dald/random.hpp"

namespace dald {

enum class Method {
  kRandom,
  kEntropy,
  kMargin,
  kBald,
  kDald,
  kEbald,
  kEdald,
  kPowerBald,
  kPowerDald,
  kCoreset,     // k-center greedy over the candidates
  kMaxHerding,  // coverage greedy over the candidates
};

inline constexpr std::array<std::pair<Method, std::string_view>, 11> kMethodNames{{
    {Method::kRandom, "random"},
    {Method::kEntropy, "entropy"},
    {Method::kMargin, "margin"},
    {Method::kBald, "bald"},
    {Method::kDald, "dald"},
    {Method::kEbald, "ebald"},
    {Method::kEdald, "edald"},
    {Method::kPowerBald, "power_bald"},
    {Method::kPowerDald, "power_dald"},
    {Method::kCoreset, "coreset"},
    {Method::kMaxHerding, "maxherding"},
}};

inline std::string_view method_name(Method m) {
  for (const auto& [method, name] : kMethodNames)
    if (method == m) return name;
  return "unknown";
}

inline Method parse_method(std::string_view name) {
  for (const auto& [method, n] : kMethodNames)
    if (n == name) return method;
  throw ConfigError("unknown acquisition method '" + std::string(name) + "'");
}

/// Scores that need a trained head.
constexpr bool needs_head(Method m) {
  return m != Method::kRandom && m != Method::kCoreset && m != Method::kMaxHerding;
}
constexpr bool uses_dropout(Method m) {
  return m == Method::kBald || m == Method::kEbald || m == Method::kPowerBald;
}
constexpr bool is_disagreement(Method m) {
  return m == Method::kBald || m == Method::kDald || m == Method::kEbald || m == Method::kEdald ||
         m == Method::kPowerBald || m == Method::kPowerDald;
}
constexpr bool is_power(Method m) { return m == Method::kPowerBald || m == Method::kPowerDald; }

struct AcquisitionConfig {
  Method method = Method::kEdald;
  Index mc_samples = 5;
  double power_beta = 1.0;
  double dropout_rate = 0.5;
  std::uint64_t seed = 0;
  bool shared_dropout_mask = false;  // test hook: every dropout pass reuses one mask

  void validate() const {
    if (mc_samples < 1) throw ConfigError("mc_samples must be >= 1");
    if (is_disagreement(method) && mc_samples < 2) throw ConfigError("disagreement scores need mc_samples >= 2");
    if (!(power_beta >= 0.0) || !std::isfinite(power_beta)) throw ConfigError("power beta must be >= 0");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw ConfigError("dropout rate must lie in [0, 1)");
    if (uses_dropout(method) && dropout_rate == 0.0) {
      throw ConfigError("dropout-based scores need dropout_rate > 0");
    }
  }
};

// ---------------------------------------------------------------------------
// Scores on probability vectors

namespace detail {

template <class Row>
void require_distribution(const Row& p) {
  DALD_REQUIRE(p.size() >= 1, "empty probability vector");
  DALD_REQUIRE((p.array() >= 0.0).all() && p.allFinite(), "probabilities must be finite and nonnegative");
  DALD_REQUIRE(std::abs(p.sum() - 1.0) <= 1e-6, "probabilities must sum to 1");
}

template <class Row>
double entropy_unchecked(const Row& p) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double v = p(i);
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

}  // namespace detail

/// Shannon entropy in nats; 0 log 0 = 0.
template <class Row>
double entropy(const Eigen::MatrixBase<Row>& p) {
  detail::require_distribution(p);
  return detail::entropy_unchecked(p);
}

inline double entropy(std::span<const double> p) {
  return entropy(Eigen::Map<const Eigen::VectorXd>(p.data(), static_cast<Eigen::Index>(p.size())));
}

/// 1 - (top1 - top2): larger means a smaller margin.
template <class Row>
double margin_score(const Eigen::MatrixBase<Row>& p) {
  detail::require_distribution(p);
  DALD_REQUIRE(p.size() >= 2, "margin needs at least two classes");
  double first = -1.0, second = -1.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double v = p(i);
    if (v > first) {
      second = first;
      first = v;
    } else if (v > second) {
      second = v;
    }
  }
  return 1.0 - (first - second);
}

inline double margin_score(std::span<const double> p) {
  return margin_score(Eigen::Map<const Eigen::VectorXd>(p.data(), static_cast<Eigen::Index>(p.size())));
}

/// Predictive distributions of one pixel under several stochastic passes.
struct ProbEnsemble {
  Probabilities members;                       // M_mc x C
  std::optional<Eigen::RowVectorXd> extra;     // independent extra draw

  void validate() const {
    DALD_REQUIRE(members.rows() >= 1, "ensemble needs at least one member");
    for (Index m = 0; m < members.rows(); ++m) detail::require_distribution(members.row(m));
    if (extra) {
      DALD_REQUIRE(extra->size() == members.cols(), "extra draw has the wrong class count");
      detail::require_distribution(*extra);
    }
  }
};

/// H(mean member) - mean H(member), before any clamping.
inline double mutual_information_raw(const Probabilities& members) {
  DALD_REQUIRE(members.rows() >= 2, "mutual information needs at least two members");
  const Eigen::RowVectorXd mean = members.colwise().mean();
  double conditional = 0.0;
  for (Index m = 0; m < members.rows(); ++m) conditional += detail::entropy_unchecked(members.row(m));
  conditional /= static_cast<double>(members.rows());
  return detail::entropy_unchecked(mean) - conditional;
}

/// Disagreement between ensemble members: the entropy of the mean prediction
/// minus the mean of the member entropies. Negative values within 1e-9 of
/// zero (rounding) are reported as 0.
inline double mutual_information(const ProbEnsemble& ens) {
  ens.validate();
  DALD_REQUIRE(ens.members.rows() >= 2, "mutual information needs at least two members");
  bool identical = true;
  for (Index m = 1; m < ens.members.rows() && identical; ++m) identical = ens.members.row(m) == ens.members.row(0);
  if (identical) return 0.0;
  const double mi = mutual_information_raw(ens.members);
  return (mi < 0.0 && mi >= -1e-9) ? 0.0 : mi;
}

// ---------------------------------------------------------------------------
// Scores of pool pixels

struct ScoreParts {
  double disagreement = 0.0;   // mutual information over the M_mc draws
  double extra_entropy = 0.0;  // entropy of the independent draw
  [[nodiscard]] double total() const { return disagreement + extra_entropy; }
};

/// Feature-noise ensemble of one pixel: draws 1..M_mc form the members, draw 0
/// the extra prediction.
inline ProbEnsemble feature_ensemble(const FeaturePool& pool, Index pixel, const HeadParams& head,
                                     const StochasticFeatureProvider& provider, const AcquisitionConfig& config,
                                     bool with_extra) {
  ProbEnsemble ens;
  ens.members = forward(head, provider.sample_features(pool, pixel, config.mc_samples, config.seed, 1));
  if (with_extra) {
    Probabilities extra = forward(head, provider.sample_features(pool, pixel, 1, config.seed, 0));
    ens.extra = extra.row(0);
  }
  return ens;
}

/// Dropout ensemble of one pixel on its base feature: pass 0 is the extra
/// prediction, passes 1..M_mc the members.
inline ProbEnsemble dropout_ensemble(const FeaturePool& pool, Index pixel, const HeadParams& head,
                                     const AcquisitionConfig& config, bool with_extra) {
  if (!(config.dropout_rate > 0.0)) throw ConfigError("dropout-based scores need dropout_rate > 0");
  const std::uint64_t seed = derive_seed({config.seed, static_cast<std::uint64_t>(pixel)});
  const Index passes = config.mc_samples + 1;
  FeatureMatrix x(passes, pool.dim());
  for (Index r = 0; r < passes; ++r) x.row(r) = pool.feature(pixel);
  Probabilities probs;
  if (config.shared_dropout_mask) {
    probs.resize(passes, head.classes());
    for (Index r = 0; r < passes; ++r) probs.row(r) = forward(head, x.topRows(1), config.dropout_rate, seed).row(0);
  } else {
    probs = forward(head, x, config.dropout_rate, seed);
  }
  ProbEnsemble ens;
  ens.members = probs.bottomRows(config.mc_samples);
  if (with_extra) ens.extra = probs.row(0);
  return ens;
}

/// Feature-noise disagreement (DALD).
inline double dald_score(const FeaturePool& pool, Index pixel, const HeadParams& head,
                         const StochasticFeatureProvider& provider, const AcquisitionConfig& config) {
  return mutual_information(feature_ensemble(pool, pixel, head, provider, config, false));
}

/// DALD plus the entropy of an independent draw, split into its two terms.
inline ScoreParts edald_parts(const FeaturePool& pool, Index pixel, const HeadParams& head,
                              const StochasticFeatureProvider& provider, const AcquisitionConfig& config) {
  const auto ens = feature_ensemble(pool, pixel, head, provider, config, true);
  return {mutual_information(ens), entropy(*ens.extra)};
}

inline double edald_score(const FeaturePool& pool, Index pixel, const HeadParams& head,
                          const StochasticFeatureProvider& provider, const AcquisitionConfig& config) {
  return edald_parts(pool, pixel, head, provider, config).total();
}

enum class BaldVariant { kBald, kEbald };

/// MC-dropout disagreement (BALD) or its entropy-augmented form (eBALD).
inline ScoreParts bald_parts(const FeaturePool& pool, Index pixel, const HeadParams& head,
                             const AcquisitionConfig& config) {
  const auto ens = dropout_ensemble(pool, pixel, head, config, true);
  return {mutual_information(ens), entropy(*ens.extra)};
}

inline double bald_family_score(const FeaturePool& pool, Index pixel, const HeadParams& head,
                                const AcquisitionConfig& config, BaldVariant variant) {
  const auto parts = bald_parts(pool, pixel, head, config);
  return variant == BaldVariant::kBald ? parts.disagreement : parts.total();
}

/// Scores every listed pixel under `config.method`; higher = acquire first.
/// Representation-only and random methods have no score and are rejected.
inline std::vector<double> score_pixels(const FeaturePool& pool, std::span<const Index> pixels,
                                        const HeadParams& head, const StochasticFeatureProvider& provider,
                                        const AcquisitionConfig& config) {
  config.validate();
  DALD_REQUIRE(needs_head(config.method), "method '" + std::string(method_name(config.method)) + "' has no score");
  std::vector<double> out(pixels.size());
  if (config.method == Method::kEntropy || config.method == Method::kMargin) {
    FeatureMatrix x(static_cast<Index>(pixels.size()), pool.dim());
    for (std::size_t i = 0; i < pixels.size(); ++i) x.row(static_cast<Index>(i)) = pool.feature(pixels[i]);
    const auto probs = forward(head, x);
    for (std::size_t i = 0; i < pixels.size(); ++i) {
      const auto row = probs.row(static_cast<Index>(i));
      out[i] = config.method == Method::kEntropy ? entropy(row) : margin_score(row);
    }
    return out;
  }
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const Index p = pixels[i];
    switch (config.method) {
      case Method::kDald:
      case Method::kPowerDald: out[i] = dald_score(pool, p, head, provider, config); break;
      case Method::kEdald: out[i] = edald_score(pool, p, head, provider, config); break;
      case Method::kBald:
      case Method::kPowerBald: out[i] = bald_family_score(pool, p, head, config, BaldVariant::kBald); break;
      case Method::kEbald: out[i] = bald_family_score(pool, p, head, config, BaldVariant::kEbald); break;
      default: break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batch selection from scores

/// Indices of the b largest scores, largest first; ties to the lower index.
inline std::vector<Index> top_b(std::span<const double> scores, Index b) {
  if (b < 0 || b > static_cast<Index>(scores.size())) {
    throw BudgetError("top-b budget " + std::to_string(b) + " exceeds " + std::to_string(scores.size()) + " scores");
  }
  std::vector<Index> idx(scores.size());
  std::iota(idx.begin(), idx.end(), Index{0});
  std::partial_sort(idx.begin(), idx.begin() + b, idx.end(), [&](Index a, Index c) {
    const double sa = scores[static_cast<std::size_t>(a)];
    const double sc = scores[static_cast<std::size_t>(c)];
    return sa != sc ? sa > sc : a < c;
  });
  idx.resize(static_cast<std::size_t>(b));
  return idx;
}

/// Draws b distinct indices without replacement, each draw proportional to
/// score^beta among the remaining ones. beta = 0 is uniform over the positive
/// scores (over everything when all scores are zero).
inline std::vector<Index> power_sample(std::span<const double> scores, double beta, Index b, std::uint64_t seed) {
  if (!(beta >= 0.0)) throw ConfigError("power beta must be >= 0");
  for (double s : scores) DALD_REQUIRE(s >= 0.0 && std::isfinite(s), "power sampling needs finite scores >= 0");
  std::vector<Index> support;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (scores[i] > 0.0) support.push_back(static_cast<Index>(i));
  const bool all_zero = support.empty();
  if (all_zero) {
    if (beta > 0.0 && b > 0) throw BudgetError("power sampling: no positive scores");
    support.resize(scores.size());
    std::iota(support.begin(), support.end(), Index{0});
  }
  if (b < 0 || b > static_cast<Index>(support.size())) {
    throw BudgetError("power sampling budget " + std::to_string(b) + " exceeds support of " +
                      std::to_string(support.size()));
  }
  // Weights relative to the largest score keep s^beta representable.
  std::vector<double> weight(support.size(), 1.0);
  if (beta > 0.0) {
    double top = 0.0;
    for (Index i : support) top = std::max(top, scores[static_cast<std::size_t>(i)]);
    for (std::size_t k = 0; k < support.size(); ++k) {
      weight[k] = std::exp(beta * (std::log(scores[static_cast<std::size_t>(support[k])]) - std::log(top)));
    }
  }
  Engine rng = make_engine({stream::kPower, seed});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(b));
  for (Index draw = 0; draw < b; ++draw) {
    double total = 0.0;
    for (double w : weight) total += w;
    std::size_t chosen = support.size();
    if (total > 0.0) {
      const double target = unit(rng) * total;
      double run = 0.0;
      for (std::size_t k = 0; k < weight.size(); ++k) {
        if (weight[k] <= 0.0) continue;
        run += weight[k];
        chosen = k;
        if (target < run) break;
      }
    } else {
      // Every remaining weight underflowed: fall back to uniform over what is left.
      std::vector<std::size_t> left;
      for (std::size_t k = 0; k < weight.size(); ++k)
        if (weight[k] == 0.0 && support[k] >= 0) left.push_back(k);
      chosen = left[std::uniform_int_distribution<std::size_t>(0, left.size() - 1)(rng)];
    }
    out.push_back(support[chosen]);
    weight[chosen] = 0.0;
    support[chosen] = -1;
  }
  return out;
}

}  // namespace dald
