#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "dald/head.hpp"
#include "test_util.hpp"

namespace dald {
namespace {

Probabilities prob_rows(std::initializer_list<std::initializer_list<double>> r) {
  Probabilities p(static_cast<Index>(r.size()), static_cast<Index>(r.begin()->size()));
  Index i = 0;
  for (const auto& row : r) {
    Index j = 0;
    for (double v : row) p(i, j++) = v;
    ++i;
  }
  return p;
}

TEST(Forward, ZeroWeightsGiveUniform) {
  auto p = init_head(3, 8, 4, 1);
  p.w1.setZero();
  p.b1.setZero();
  p.w2.setZero();
  p.b2.setZero();
  const auto probs = forward(p, test::random_points(6, 3, 2));
  for (Index r = 0; r < 6; ++r)
    for (Index c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(probs(r, c), 0.25);
}

TEST(Forward, InferenceIsDeterministic) {
  const auto p = init_head(5, 16, 3, 2);
  const auto x = test::random_points(9, 5, 3);
  EXPECT_TRUE(forward(p, x) == forward(p, x));
}

TEST(Forward, RowsAreDistributions) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 1000; ++t) {
    auto p = init_head(1 + static_cast<Index>(rng() % 6), 4 + static_cast<Index>(rng() % 12),
                       2 + static_cast<Index>(rng() % 5), rng());
    p.w2 *= 10.0;
    const auto x = test::random_points(3, p.input_dim(), rng(), 5.0);
    const auto probs = forward(p, x, t % 3 == 0 ? 0.5 : 0.0, rng());
    for (Index r = 0; r < probs.rows(); ++r) {
      EXPECT_NEAR(probs.row(r).sum(), 1.0, 1e-6);
      EXPECT_TRUE((probs.row(r).array() >= 0.0).all());
    }
  }
}

TEST(Forward, RowOutputIndependentOfBatch) {
  const auto p = init_head(4, 32, 5, 5);
  const auto x = test::random_points(7, 4, 6);
  const auto all = forward(p, x);
  for (Index r = 0; r < 7; ++r) {
    const FeatureMatrix one = x.row(r);
    EXPECT_TRUE(forward(p, one).row(0) == all.row(r));
  }
}

TEST(Forward, DimensionMismatchIsContractViolation) {
  const auto p = init_head(4, 8, 3, 1);
  EXPECT_THROW(forward(p, test::random_points(2, 3, 1)), ContractViolation);
}

TEST(Forward, TrainModeUpdatesRunningStatistics) {
  auto p = init_head(3, 8, 2, 1);
  const auto before = p;
  forward(p, test::random_points(6, 3, 2), Mode::kTrain);
  EXPECT_FALSE(p.running_mean == before.running_mean);
  EXPECT_TRUE((p.running_var.array() > 0.0).all());
  auto q = before;
  forward(q, test::random_points(1, 3, 2), Mode::kTrain);  // single row: running statistics, no update
  EXPECT_TRUE(q == before);
}

TEST(Softmax, StableForLargeLogits) {
  Eigen::RowVectorXd row(4);
  row << 1e3, -1e3, 999.0, 0.0;
  softmax_inplace(row);
  EXPECT_TRUE(row.allFinite());
  EXPECT_NEAR(row.sum(), 1.0, 1e-12);
  EXPECT_GT(row(0), row(2));
}

TEST(Softmax, ShiftInvariant) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int t = 0; t < 200; ++t) {
    Eigen::RowVectorXd a(5);
    for (Index i = 0; i < 5; ++i) a(i) = n(rng);
    Eigen::RowVectorXd b = a.array() + 123.25;
    softmax_inplace(a);
    softmax_inplace(b);
    EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(CrossEntropy, ClosedForms) {
  std::vector<int> y{0, 2, 1};
  EXPECT_LE(cross_entropy(prob_rows({{1, 0, 0}, {0, 0, 1}, {0, 1, 0}}), y), 1e-11);
  EXPECT_NEAR(cross_entropy(prob_rows({{.25, .25, .25, .25}, {.25, .25, .25, .25}}), std::vector<int>{3, 0}),
              std::log(4.0), 1e-15);
  const auto p = prob_rows({{0.7, 0.2, 0.1}, {0.1, 0.3, 0.6}, {0.25, 0.5, 0.25}});
  const double hand = -(std::log(0.7) + std::log(0.6) + std::log(0.5)) / 3.0;
  EXPECT_NEAR(cross_entropy(p, y), hand, 1e-12);
}

TEST(CrossEntropy, FloorsZeroProbability) {
  EXPECT_NEAR(cross_entropy(prob_rows({{1, 0}}), std::vector<int>{1}), -std::log(1e-12), 1e-9);
}

TEST(CrossEntropy, ShapeMismatchIsContractViolation) {
  EXPECT_THROW(cross_entropy(prob_rows({{1, 0}}), std::vector<int>{0, 1}), ContractViolation);
}

// Groups whose gradient vanishes (b1 under batch statistics) are compared
// against a 1e-6 floor instead of their own norm.
double group_relative_error(const Eigen::MatrixXd& analytic, const Eigen::MatrixXd& numeric) {
  const double scale = std::max({analytic.norm(), numeric.norm(), 1e-6});
  return (analytic - numeric).norm() / scale;
}

template <class Group>
Eigen::MatrixXd numeric_gradient(HeadParams p, Group group, const FeatureMatrix& x, const std::vector<int>& y,
                                 double wd) {
  auto& target = group(p);
  Eigen::MatrixXd g(target.rows(), target.cols());
  const double h = 1e-5;
  auto objective = [&](const HeadParams& q) {
    auto lg = loss_and_gradient(q, x, y);
    double reg = 0.0;
    for (const auto* m : {&q.w1, &q.w2}) reg += m->squaredNorm();
    for (const auto* v : {&q.b1, &q.norm_gain, &q.norm_bias, &q.b2}) reg += v->squaredNorm();
    return lg.loss + 0.5 * wd * reg;
  };
  for (Index i = 0; i < target.rows(); ++i)
    for (Index j = 0; j < target.cols(); ++j) {
      const double keep = target(i, j);
      target(i, j) = keep + h;
      const double up = objective(p);
      target(i, j) = keep - h;
      const double down = objective(p);
      target(i, j) = keep;
      g(i, j) = (up - down) / (2 * h);
    }
  return g;
}

void check_gradients(std::uint64_t seed, double wd) {
  std::mt19937_64 rng(seed);
  const Index d = 1 + static_cast<Index>(rng() % 8), h = 2 + static_cast<Index>(rng() % 15);
  const Index c = 2 + static_cast<Index>(rng() % 4), n = 2 + static_cast<Index>(rng() % 6);
  auto p = init_head(d, h, c, rng());
  std::normal_distribution<double> jitter(0.0, 0.3);
  for (Index i = 0; i < h; ++i) {
    p.norm_gain(i) += jitter(rng);
    p.norm_bias(i) += jitter(rng);
  }
  const auto x = test::random_points(n, d, rng());
  std::vector<int> y(static_cast<std::size_t>(n));
  for (auto& v : y) v = static_cast<int>(rng() % static_cast<std::uint64_t>(c));
  const auto lg = loss_and_gradient(p, x, y, wd);
  ASSERT_TRUE(lg.trace.batch_stats);
  EXPECT_LT(group_relative_error(lg.grad.w1, numeric_gradient(p, [](HeadParams& q) -> Eigen::MatrixXd& { return q.w1; }, x, y, wd)), 1e-4);
  EXPECT_LT(group_relative_error(lg.grad.w2, numeric_gradient(p, [](HeadParams& q) -> Eigen::MatrixXd& { return q.w2; }, x, y, wd)), 1e-4);
  EXPECT_LT(group_relative_error(lg.grad.b1, numeric_gradient(p, [](HeadParams& q) -> Eigen::VectorXd& { return q.b1; }, x, y, wd)), 1e-4);
  EXPECT_LT(group_relative_error(lg.grad.b2, numeric_gradient(p, [](HeadParams& q) -> Eigen::VectorXd& { return q.b2; }, x, y, wd)), 1e-4);
  EXPECT_LT(group_relative_error(lg.grad.norm_gain, numeric_gradient(p, [](HeadParams& q) -> Eigen::VectorXd& { return q.norm_gain; }, x, y, wd)), 1e-4);
  EXPECT_LT(group_relative_error(lg.grad.norm_bias, numeric_gradient(p, [](HeadParams& q) -> Eigen::VectorXd& { return q.norm_bias; }, x, y, wd)), 1e-4);
}

TEST(Gradient, MatchesCentralDifferences) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    SCOPED_TRACE(s);
    check_gradients(s, 0.0);
  }
}

TEST(Gradient, IncludesWeightDecay) {
  for (std::uint64_t s = 100; s < 105; ++s) {
    SCOPED_TRACE(s);
    check_gradients(s, 0.01);
  }
}

TEST(Cosine, PeriodAndFloor) {
  TrainConfig c;
  EXPECT_DOUBLE_EQ(cosine_learning_rate(c, 0), 1e-3);
  EXPECT_NEAR(cosine_learning_rate(c, 5), 1e-6, 1e-18);
  EXPECT_DOUBLE_EQ(cosine_learning_rate(c, 10), 1e-3);
}

TEST(Train, SeparableClassesReachFullAccuracy) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    FeatureMatrix x(20, 2);
    std::vector<int> y(20);
    for (Index i = 0; i < 20; ++i) {
      y[static_cast<std::size_t>(i)] = static_cast<int>(i % 2);
      x(i, 0) = u(rng) + (i % 2 ? 1.5 : -1.5);
      x(i, 1) = u(rng);
    }
    TrainConfig c;
    c.max_iterations = 500;
    const auto r = train_head(x, y, 2, c, seed);
    EXPECT_EQ(r.accuracy, 1.0) << "seed " << seed;
    EXPECT_LE(r.iterations, 500);
  }
}

TEST(Train, MemorizesSinglePoint) {
  FeatureMatrix x(1, 3);
  x << 0.2, -1.0, 0.5;
  const auto r = train_head(x, std::vector<int>{2}, 4, TrainConfig{}, 3);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(detail::accuracy_of(forward(r.params, x), std::vector<int>{2}), 1.0);
}

TEST(Train, ReturnedLossNeverExceedsInitial) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 10; ++t) {
    const auto x = test::random_points(12, 3, rng());
    std::vector<int> y(12);
    for (auto& v : y) v = static_cast<int>(rng() % 3);
    TrainConfig c;
    c.max_iterations = 200;
    const auto r = train_head(x, y, 3, c, rng());
    EXPECT_LE(r.best_loss, r.initial_loss);
    EXPECT_NEAR(cross_entropy(forward(r.params, x), y), r.best_loss, 1e-12);
  }
}

TEST(Train, BitwiseReproducible) {
  const auto x = test::random_points(17, 4, 1);
  std::vector<int> y(17);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<int>(i % 3);
  TrainConfig c;
  c.max_iterations = 300;
  c.dropout_rate = 0.3;
  const auto a = train_head(x, y, 3, c, 42);
  const auto b = train_head(x, y, 3, c, 42);
  EXPECT_TRUE(a.params == b.params);
  EXPECT_EQ(a.iterations, b.iterations);
  EXPECT_FALSE(a.params == train_head(x, y, 3, c, 43).params);
}

TEST(Train, Errors) {
  FeatureMatrix empty(0, 2);
  EXPECT_THROW(train_head(empty, std::vector<int>{}, 2, TrainConfig{}, 0), ContractViolation);
  FeatureMatrix x(1, 2);
  x << 1, 2;
  EXPECT_THROW(train_head(x, std::vector<int>{2}, 2, TrainConfig{}, 0), LabelError);
  TrainConfig bad;
  bad.learning_rate = 0.0;
  EXPECT_THROW(train_head(x, std::vector<int>{0}, 2, bad, 0), ConfigError);
  bad = TrainConfig{};
  bad.early_stop_patience = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Checkpoint, RoundTripIsExact) {
  auto p = init_head(6, 10, 4, 11);
  forward(p, test::random_points(5, 6, 1), Mode::kTrain);
  std::stringstream buf;
  write_checkpoint(p, buf);
  EXPECT_EQ(buf.str().size(), 8u + 4u + 24u + 8u * (60u + 10u * 5u + 40u + 4u));
  EXPECT_TRUE(read_checkpoint(buf) == p);

  const auto path = std::filesystem::temp_directory_path() / "dald_head_roundtrip.bin";
  save_checkpoint(p, path.string());
  EXPECT_TRUE(load_checkpoint(path.string()) == p);
  std::filesystem::remove(path);
}

TEST(Checkpoint, LayoutIsLittleEndianHeader) {
  const auto p = init_head(2, 3, 2, 1);
  std::stringstream buf;
  write_checkpoint(p, buf);
  const std::string s = buf.str();
  EXPECT_EQ(s.substr(0, 8), "DALDHEAD");
  EXPECT_EQ(static_cast<unsigned char>(s[8]), 1u);
  EXPECT_EQ(static_cast<unsigned char>(s[12]), 2u);  // D
  EXPECT_EQ(static_cast<unsigned char>(s[20]), 3u);  // hidden
  EXPECT_EQ(static_cast<unsigned char>(s[28]), 2u);  // C
  double first = 0.0;
  std::memcpy(&first, s.data() + 36, 8);
  EXPECT_EQ(first, p.w1(0, 0));
}

TEST(Checkpoint, RejectsCorruptInput) {
  std::stringstream bad("NOTAHEAD\x01");
  EXPECT_THROW(read_checkpoint(bad), FormatError);
  const auto p = init_head(2, 3, 2, 1);
  std::stringstream buf;
  write_checkpoint(p, buf);
  std::stringstream truncated(buf.str().substr(0, 50));
  EXPECT_THROW(read_checkpoint(truncated), FormatError);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/head.bin"), FormatError);
}

}  // namespace
}  // namespace dald
