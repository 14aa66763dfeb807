#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "dald/acquisition.hpp"
#include "dald/testing/oracles.hpp"
#include "test_util.hpp"

namespace dald {
namespace {

const double kLn2 = std::numbers::ln2;

Probabilities rows(std::initializer_list<std::initializer_list<double>> r) {
  Probabilities p(static_cast<Index>(r.size()), static_cast<Index>(r.begin()->size()));
  Index i = 0;
  for (const auto& row : r) {
    Index j = 0;
    for (double v : row) p(i, j++) = v;
    ++i;
  }
  return p;
}

Probabilities random_members(std::mt19937_64& rng, Index m, Index c, double concentration = 1.0) {
  std::gamma_distribution<double> g(concentration, 1.0);
  Probabilities p(m, c);
  for (Index i = 0; i < m; ++i) {
    for (Index k = 0; k < c; ++k) p(i, k) = g(rng) + 1e-300;
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

std::vector<std::vector<double>> as_nested(const Probabilities& p) {
  std::vector<std::vector<double>> out(static_cast<std::size_t>(p.rows()));
  for (Index i = 0; i < p.rows(); ++i) out[static_cast<std::size_t>(i)].assign(p.row(i).data(), p.row(i).data() + p.cols());
  return out;
}

TEST(Entropy, ClosedForms) {
  EXPECT_EQ(entropy(std::vector<double>{1, 0, 0}), 0.0);
  EXPECT_NEAR(entropy(std::vector<double>{0.25, 0.25, 0.25, 0.25}), std::log(4.0), 1e-15);
  EXPECT_NEAR(entropy(std::vector<double>{0.5, 0.5}), kLn2, 1e-15);
}

TEST(Entropy, InvalidDistributionIsContractViolation) {
  EXPECT_THROW(entropy(std::vector<double>{0.5, 0.6}), ContractViolation);
  EXPECT_THROW(entropy(std::vector<double>{1.5, -0.5}), ContractViolation);
}

TEST(Margin, ClosedForms) {
  EXPECT_EQ(margin_score(std::vector<double>{1, 0}), 0.0);
  EXPECT_EQ(margin_score(std::vector<double>{0.5, 0.5}), 1.0);
  EXPECT_NEAR(margin_score(std::vector<double>{0.6, 0.3, 0.1}), 0.7, 1e-15);
  EXPECT_THROW(margin_score(std::vector<double>{1.0}), ContractViolation);
}

TEST(Scores, InvariantToClassOrder) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 200; ++t) {
    auto p = random_members(rng, 1, 6);
    std::vector<double> v(p.data(), p.data() + 6);
    const double h = entropy(v), mg = margin_score(v);
    std::shuffle(v.begin(), v.end(), rng);
    EXPECT_NEAR(entropy(v), h, 1e-14);
    EXPECT_NEAR(margin_score(v), mg, 1e-14);
  }
}

TEST(MutualInformation, IdenticalMembersGiveZero) {
  ProbEnsemble e{rows({{0.2, 0.3, 0.5}, {0.2, 0.3, 0.5}, {0.2, 0.3, 0.5}}), std::nullopt};
  EXPECT_EQ(mutual_information(e), 0.0);
}

TEST(MutualInformation, OppositeCertainMembersGiveLn2) {
  ProbEnsemble e{rows({{1, 0}, {0, 1}}), std::nullopt};
  EXPECT_NEAR(mutual_information(e), kLn2, 1e-15);
}

TEST(MutualInformation, NeedsTwoMembers) {
  ProbEnsemble e{rows({{0.5, 0.5}}), std::nullopt};
  EXPECT_THROW(mutual_information(e), ContractViolation);
}

TEST(MutualInformation, MatchesReferenceFormula) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 2000; ++t) {
    const auto p = random_members(rng, 5, 3, 0.5);
    ProbEnsemble e{p, std::nullopt};
    EXPECT_NEAR(mutual_information(e), std::max(0.0, oracle::mutual_information(as_nested(p))), 1e-12);
  }
}

TEST(MutualInformation, NonnegativeAndBounded) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20000; ++t) {
    const Index c = 2 + static_cast<Index>(rng() % 9);
    const Index m = 2 + static_cast<Index>(rng() % 7);
    const auto p = random_members(rng, m, c, t % 2 ? 0.2 : 2.0);
    const double raw = mutual_information_raw(p);
    EXPECT_GE(raw, -1e-9);
    const double mi = mutual_information({p, std::nullopt});
    EXPECT_GE(mi, 0.0);
    EXPECT_LE(mi, std::log(static_cast<double>(c)) + 1e-9);
    EXPECT_LE(mi, detail::entropy_unchecked(Eigen::RowVectorXd(p.colwise().mean())) + 1e-12);
  }
}

TEST(MutualInformation, InvariantToMemberOrder) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 200; ++t) {
    auto p = random_members(rng, 6, 4);
    const double a = mutual_information({p, std::nullopt});
    Probabilities q = p.colwise().reverse();
    EXPECT_NEAR(mutual_information({q, std::nullopt}), a, 1e-14);
  }
}

TEST(EnsembleScores, EdaldClosedForm) {
  // Certain but opposite members plus a maximally uncertain extra draw.
  const auto members = rows({{1, 0}, {0, 1}});
  const Eigen::RowVector2d extra(0.5, 0.5);
  EXPECT_NEAR(mutual_information({members, std::nullopt}) + entropy(extra), 2 * kLn2, 1e-15);
}

struct Fixture {
  FeaturePool pool;
  HeadParams head;
};

Fixture scoring_fixture(std::uint64_t seed, Index side = 10) {
  SyntheticTaskSpec spec;
  spec.n_images = 1;
  spec.image_side = side;
  spec.n_classes = 3;
  spec.feature_dim = 4;
  auto pool = generate_synthetic(spec, seed);
  auto head = init_head(4, 16, 3, seed + 100);
  head.w2 *= 8.0;  // sharper predictions
  return {std::move(pool), std::move(head)};
}

TEST(Dald, DeterministicProviderGivesZero) {
  const auto f = scoring_fixture(1);
  const auto provider = StochasticFeatureProvider::deterministic();
  AcquisitionConfig cfg;
  for (Index i = 0; i < f.pool.size(); ++i) EXPECT_EQ(dald_score(f.pool, i, f.head, provider, cfg), 0.0);
}

TEST(Dald, LargeNoiseStaysBelowLnC) {
  const auto f = scoring_fixture(2, 32);
  const auto provider = StochasticFeatureProvider::gaussian(20.0);
  AcquisitionConfig cfg;
  cfg.mc_samples = 8;
  double top = 0.0;
  for (Index i = 0; i < 1000; ++i) {
    const double s = dald_score(f.pool, i, f.head, provider, cfg);
    EXPECT_LE(s, std::log(3.0) + 1e-12);
    top = std::max(top, s);
  }
  EXPECT_GT(top, 0.5 * std::log(3.0));
}

TEST(Dald, ReproducibleForFixedSeed) {
  const auto f = scoring_fixture(3);
  const auto provider = StochasticFeatureProvider::gaussian(0.5);
  AcquisitionConfig cfg;
  cfg.seed = 77;
  for (Index i = 0; i < 20; ++i) {
    EXPECT_EQ(dald_score(f.pool, i, f.head, provider, cfg), dald_score(f.pool, i, f.head, provider, cfg));
    EXPECT_EQ(edald_score(f.pool, i, f.head, provider, cfg), edald_score(f.pool, i, f.head, provider, cfg));
  }
}

TEST(Edald, DecomposesIntoDaldPlusEntropy) {
  const auto f = scoring_fixture(4);
  const auto provider = StochasticFeatureProvider::gaussian(0.7);
  std::mt19937_64 rng(5);
  for (int t = 0; t < 300; ++t) {
    AcquisitionConfig cfg;
    cfg.seed = rng();
    const Index i = static_cast<Index>(rng() % static_cast<std::uint64_t>(f.pool.size()));
    const auto parts = edald_parts(f.pool, i, f.head, provider, cfg);
    const double dald = dald_score(f.pool, i, f.head, provider, cfg);
    EXPECT_EQ(parts.disagreement, dald);
    EXPECT_NEAR(edald_score(f.pool, i, f.head, provider, cfg), dald + parts.extra_entropy, 1e-12);
    EXPECT_GE(edald_score(f.pool, i, f.head, provider, cfg), dald);
    // The extra draw is sample 0 of the provider stream.
    const Probabilities extra = forward(f.head, provider.sample_features(f.pool, i, 1, cfg.seed, 0));
    EXPECT_NEAR(parts.extra_entropy, entropy(extra.row(0)), 1e-15);
  }
}

TEST(Edald, DeterministicProviderReducesToEntropy) {
  const auto f = scoring_fixture(6);
  const auto provider = StochasticFeatureProvider::deterministic();
  AcquisitionConfig cfg;
  std::vector<Index> all = test::iota_indices(f.pool.size());
  cfg.method = Method::kEdald;
  const auto ed = score_pixels(f.pool, all, f.head, provider, cfg);
  cfg.method = Method::kEntropy;
  const auto en = score_pixels(f.pool, all, f.head, provider, cfg);
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(ed[i], en[i]);
  EXPECT_EQ(top_b(ed, 100), top_b(en, 100));
}

TEST(Bald, SharedMaskGivesZero) {
  const auto f = scoring_fixture(7);
  AcquisitionConfig cfg;
  cfg.method = Method::kBald;
  cfg.shared_dropout_mask = true;
  for (Index i = 0; i < 30; ++i) EXPECT_EQ(bald_family_score(f.pool, i, f.head, cfg, BaldVariant::kBald), 0.0);
}

TEST(Bald, EbaldAddsExtraPassEntropy) {
  const auto f = scoring_fixture(8);
  AcquisitionConfig cfg;
  cfg.method = Method::kEbald;
  cfg.seed = 3;
  double positive = 0.0;
  for (Index i = 0; i < 50; ++i) {
    const auto parts = bald_parts(f.pool, i, f.head, cfg);
    const double b = bald_family_score(f.pool, i, f.head, cfg, BaldVariant::kBald);
    const double e = bald_family_score(f.pool, i, f.head, cfg, BaldVariant::kEbald);
    EXPECT_EQ(b, parts.disagreement);
    EXPECT_NEAR(e - b, parts.extra_entropy, 1e-12);
    EXPECT_GE(parts.extra_entropy, 0.0);
    EXPECT_EQ(e, bald_family_score(f.pool, i, f.head, cfg, BaldVariant::kEbald));
    positive = std::max(positive, b);
  }
  EXPECT_GT(positive, 0.0);
}

TEST(Bald, ZeroDropoutIsConfigError) {
  const auto f = scoring_fixture(9);
  AcquisitionConfig cfg;
  cfg.method = Method::kBald;
  cfg.dropout_rate = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_THROW(bald_family_score(f.pool, 0, f.head, cfg, BaldVariant::kBald), ConfigError);
}

TEST(AcquisitionConfig, Validation) {
  AcquisitionConfig cfg;
  cfg.mc_samples = 1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.method = Method::kEntropy;
  EXPECT_NO_THROW(cfg.validate());
  cfg.method = Method::kPowerDald;
  cfg.mc_samples = 5;
  cfg.power_beta = -1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_THROW(parse_method("balentacq"), ConfigError);
  for (const auto& [m, name] : kMethodNames) EXPECT_EQ(parse_method(name), m);
}

TEST(TopB, Examples) {
  EXPECT_EQ(top_b(std::vector<double>{3, 1, 2}, 2), (std::vector<Index>{0, 2}));
  EXPECT_EQ(top_b(std::vector<double>{5, 5, 5}, 2), (std::vector<Index>{0, 1}));
  EXPECT_THROW(top_b(std::vector<double>{1, 2}, 3), BudgetError);
}

TEST(TopB, MatchesSortOracle) {
  std::mt19937_64 rng(10);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 1 + rng() % 60;
    std::vector<double> s(n);
    for (auto& v : s) v = static_cast<double>(rng() % 10) / 4.0;  // many ties
    const Index b = static_cast<Index>(rng() % (n + 1));
    EXPECT_EQ(top_b(s, b), oracle::top_b(s, b));
  }
}

TEST(PowerSample, DegenerateSupport) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    EXPECT_EQ(power_sample(std::vector<double>{1, 0, 0}, 1.0, 1, seed), (std::vector<Index>{0}));
  }
  EXPECT_THROW(power_sample(std::vector<double>{1, 0, 0}, 1.0, 2, 0), BudgetError);
}

TEST(PowerSample, DistinctAndReproducible) {
  std::vector<double> s{0.3, 0.1, 0.9, 0.4, 0.2, 0.6};
  const auto a = power_sample(s, 2.0, 6, 5);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, test::iota_indices(6));
  EXPECT_EQ(a, power_sample(s, 2.0, 6, 5));
}

TEST(PowerSample, BetaZeroIsUniform) {
  const std::vector<double> s{0.9, 0.01, 0.5, 0.3, 0.2, 0.7, 0.05, 0.4};
  std::vector<long> counts(s.size(), 0);
  for (std::uint64_t t = 0; t < 100000; ++t) ++counts[static_cast<std::size_t>(power_sample(s, 0.0, 1, t)[0])];
  EXPECT_GT(test::uniformity_p_value(counts), 0.001);
}

TEST(PowerSample, LargeBetaConcentratesOnTop) {
  const std::vector<double> s{0.9, 0.5, 0.1};
  long hits = 0;
  for (std::uint64_t t = 0; t < 100000; ++t) hits += power_sample(s, 64.0, 1, t)[0] == 0;
  EXPECT_GT(static_cast<double>(hits) / 1e5, 0.999);
}

TEST(PowerSample, AllZeroScoresAreUniformOverEverything) {
  const std::vector<double> s(5, 0.0);
  std::vector<long> counts(5, 0);
  for (std::uint64_t t = 0; t < 20000; ++t) ++counts[static_cast<std::size_t>(power_sample(s, 0.0, 1, t)[0])];
  EXPECT_GT(test::uniformity_p_value(counts), 0.001);
}

TEST(ScorePixels, RejectsScorelessMethods) {
  const auto f = scoring_fixture(11);
  AcquisitionConfig cfg;
  cfg.method = Method::kRandom;
  std::vector<Index> px{0, 1};
  EXPECT_THROW(score_pixels(f.pool, px, f.head, StochasticFeatureProvider::deterministic(), cfg), ContractViolation);
}

}  // namespace
}  // namespace dald
