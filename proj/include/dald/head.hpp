#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dald/error.hpp"
#include "dald/feature_pool.hpp"
#include "dald/random.hpp"

namespace dald {

/// Parameters of the segmentation head:
///   softmax(W2 * dropout(relu(batchnorm(W1 x + b1))) + b2)
struct HeadParams {
  Eigen::MatrixXd w1;             // hidden x D
  Eigen::VectorXd b1;             // hidden
  Eigen::VectorXd norm_gain;      // hidden
  Eigen::VectorXd norm_bias;      // hidden
  Eigen::VectorXd running_mean;   // hidden
  Eigen::VectorXd running_var;    // hidden, > 0
  Eigen::MatrixXd w2;             // C x hidden
  Eigen::VectorXd b2;             // C

  [[nodiscard]] Index input_dim() const { return w1.cols(); }
  [[nodiscard]] Index hidden() const { return w1.rows(); }
  [[nodiscard]] Index classes() const { return w2.rows(); }

  [[nodiscard]] bool valid() const {
    const Index h = hidden();
    return b1.size() == h && norm_gain.size() == h && norm_bias.size() == h && running_mean.size() == h &&
           running_var.size() == h && w2.cols() == h && b2.size() == classes() && (running_var.array() > 0.0).all() &&
           w1.allFinite() && b1.allFinite() && norm_gain.allFinite() && norm_bias.allFinite() &&
           running_mean.allFinite() && running_var.allFinite() && w2.allFinite() && b2.allFinite();
  }

  friend bool operator==(const HeadParams& a, const HeadParams& b) {
    auto same = [](const auto& x, const auto& y) { return x.rows() == y.rows() && x.cols() == y.cols() && x == y; };
    return same(a.w1, b.w1) && same(a.b1, b.b1) && same(a.norm_gain, b.norm_gain) &&
           same(a.norm_bias, b.norm_bias) && same(a.running_mean, b.running_mean) &&
           same(a.running_var, b.running_var) && same(a.w2, b.w2) && same(a.b2, b.b2);
  }
};

/// Gradients for the learnable groups (running statistics are not learned).
struct HeadGradients {
  Eigen::MatrixXd w1;
  Eigen::VectorXd b1;
  Eigen::VectorXd norm_gain;
  Eigen::VectorXd norm_bias;
  Eigen::MatrixXd w2;
  Eigen::VectorXd b2;
};

inline constexpr double kNormMomentum = 0.1;
inline constexpr double kNormEpsilon = 1e-5;
inline constexpr double kProbFloor = 1e-12;

/// Row-wise class probabilities.
using Probabilities = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Uniform(+-1/sqrt(fan_in)) weights and biases; identity normalization.
inline HeadParams init_head(Index input_dim, Index hidden, Index classes, std::uint64_t seed) {
  DALD_REQUIRE(input_dim > 0 && hidden > 0 && classes >= 2, "head dimensions must be positive, C >= 2");
  Engine rng = make_engine({stream::kInit, seed});
  auto fill = [&rng](auto& m, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) m(i, j) = u(rng);
  };
  HeadParams p;
  const double b_in = 1.0 / std::sqrt(static_cast<double>(input_dim));
  const double b_hid = 1.0 / std::sqrt(static_cast<double>(hidden));
  p.w1.resize(hidden, input_dim);
  p.b1.resize(hidden);
  p.w2.resize(classes, hidden);
  p.b2.resize(classes);
  fill(p.w1, b_in);
  fill(p.b1, b_in);
  fill(p.w2, b_hid);
  fill(p.b2, b_hid);
  p.norm_gain = Eigen::VectorXd::Ones(hidden);
  p.norm_bias = Eigen::VectorXd::Zero(hidden);
  p.running_mean = Eigen::VectorXd::Zero(hidden);
  p.running_var = Eigen::VectorXd::Ones(hidden);
  return p;
}

/// Numerically stable softmax of one row, in place.
template <class Row>
void softmax_inplace(Row&& row) {
  // Scalar loop: vectorized exp/sum would depend on the row's alignment.
  double top = row(0);
  for (Eigen::Index i = 1; i < row.size(); ++i) top = std::max(top, static_cast<double>(row(i)));
  double total = 0.0;
  for (Eigen::Index i = 0; i < row.size(); ++i) {
    row(i) = std::exp(row(i) - top);
    total += row(i);
  }
  for (Eigen::Index i = 0; i < row.size(); ++i) row(i) /= total;
}

namespace detail {

struct ForwardTrace {
  Eigen::MatrixXd pre;       // n x H, W1 x + b1
  Eigen::MatrixXd xhat;      // n x H, normalized
  Eigen::VectorXd inv_std;   // H
  Eigen::MatrixXd hidden;    // n x H, after affine + relu + dropout
  Eigen::MatrixXd mask;      // n x H, relu * dropout scale
  Eigen::VectorXd batch_mean;
  Eigen::VectorXd batch_var;  // biased
  bool batch_stats = false;
  Probabilities probs;
};

inline Eigen::MatrixXd dropout_mask(Index rows, Index width, double rate, std::uint64_t seed) {
  Eigen::MatrixXd mask = Eigen::MatrixXd::Ones(rows, width);
  if (rate <= 0.0) return mask;
  const double keep_scale = 1.0 / (1.0 - rate);
  for (Index r = 0; r < rows; ++r) {
    Engine rng = make_engine({stream::kDropout, seed, static_cast<std::uint64_t>(r)});
    std::bernoulli_distribution keep(1.0 - rate);
    for (Index j = 0; j < width; ++j) mask(r, j) = keep(rng) ? keep_scale : 0.0;
  }
  return mask;
}

inline void forward_trace(const HeadParams& p, const FeatureMatrix& x, bool batch_stats, double dropout_rate,
                          std::uint64_t seed, ForwardTrace& t) {
  DALD_REQUIRE(x.cols() == p.input_dim(), "feature dimension does not match the head");
  DALD_REQUIRE(dropout_rate >= 0.0 && dropout_rate < 1.0, "dropout rate must lie in [0, 1)");
  const Index n = x.rows();
  // Row by row: a row's output must not depend on which rows share its batch.
  t.pre.resize(n, p.hidden());
  for (Index r = 0; r < n; ++r) t.pre.row(r).noalias() = x.row(r) * p.w1.transpose();
  t.pre.rowwise() += p.b1.transpose();
  t.batch_stats = batch_stats && n >= 2;
  if (t.batch_stats) {
    t.batch_mean = t.pre.colwise().mean().transpose();
    t.batch_var = (t.pre.rowwise() - t.batch_mean.transpose()).array().square().colwise().mean().transpose();
    t.inv_std = (t.batch_var.array() + kNormEpsilon).rsqrt();
    t.xhat = (t.pre.rowwise() - t.batch_mean.transpose()).array().rowwise() * t.inv_std.transpose().array();
  } else {
    t.inv_std = (p.running_var.array() + kNormEpsilon).rsqrt();
    t.xhat = (t.pre.rowwise() - p.running_mean.transpose()).array().rowwise() * t.inv_std.transpose().array();
  }
  Eigen::MatrixXd affine = t.xhat.array().rowwise() * p.norm_gain.transpose().array();
  affine.rowwise() += p.norm_bias.transpose();
  t.mask = dropout_mask(n, p.hidden(), dropout_rate, seed);
  t.mask = (affine.array() > 0.0).cast<double>() * t.mask.array();
  t.hidden = affine.array() * t.mask.array();
  Eigen::MatrixXd logits(n, p.classes());
  for (Index r = 0; r < n; ++r) logits.row(r).noalias() = t.hidden.row(r) * p.w2.transpose();
  logits.rowwise() += p.b2.transpose();
  t.probs = logits;
  for (Index r = 0; r < n; ++r) softmax_inplace(t.probs.row(r));
}

}  // namespace detail

enum class Mode { kTrain, kInfer };

/// Inference: normalization uses the running statistics. Dropout, when
/// `dropout_rate > 0`, masks hidden units with a stream derived from `seed`
/// and the row number.
inline Probabilities forward(const HeadParams& params, const FeatureMatrix& features, double dropout_rate = 0.0,
                             std::uint64_t seed = 0) {
  detail::ForwardTrace t;
  detail::forward_trace(params, features, false, dropout_rate, seed, t);
  return std::move(t.probs);
}

/// Mode-selecting forward pass. Train mode normalizes with batch statistics
/// and updates the running statistics; a batch of one row uses the running
/// statistics instead and leaves them untouched.
inline Probabilities forward(HeadParams& params, const FeatureMatrix& features, Mode mode, double dropout_rate = 0.0,
                             std::uint64_t seed = 0) {
  detail::ForwardTrace t;
  detail::forward_trace(params, features, mode == Mode::kTrain, dropout_rate, seed, t);
  if (t.batch_stats) {
    const double n = static_cast<double>(features.rows());
    const Eigen::VectorXd unbiased = t.batch_var * (n / (n - 1.0));
    params.running_mean = (1.0 - kNormMomentum) * params.running_mean + kNormMomentum * t.batch_mean;
    params.running_var = (1.0 - kNormMomentum) * params.running_var + kNormMomentum * unbiased;
  }
  return std::move(t.probs);
}

/// Mean of -log p[label], probabilities floored at 1e-12.
inline double cross_entropy(const Probabilities& probs, std::span<const int> labels) {
  DALD_REQUIRE(probs.rows() == static_cast<Index>(labels.size()), "probability and label counts differ");
  DALD_REQUIRE(!labels.empty(), "cross entropy of an empty batch");
  double acc = 0.0;
  for (Index r = 0; r < probs.rows(); ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    DALD_REQUIRE(y >= 0 && y < probs.cols(), "label out of range");
    acc -= std::log(std::max(probs(r, y), kProbFloor));
  }
  return acc / static_cast<double>(probs.rows());
}

struct LossGradient {
  double loss = 0.0;  // mean cross entropy (without the weight-decay term)
  HeadGradients grad;
  detail::ForwardTrace trace;
};

/// Mean cross entropy of a train-mode pass and its gradient with respect to
/// every learnable group, plus `weight_decay * theta`.
inline LossGradient loss_and_gradient(const HeadParams& p, const FeatureMatrix& x, std::span<const int> labels,
                                      double weight_decay = 0.0, double dropout_rate = 0.0, std::uint64_t seed = 0) {
  LossGradient out;
  auto& t = out.trace;
  detail::forward_trace(p, x, true, dropout_rate, seed, t);
  out.loss = cross_entropy(t.probs, labels);
  const Index n = x.rows();
  const double inv_n = 1.0 / static_cast<double>(n);

  Eigen::MatrixXd dlogits = t.probs;
  for (Index r = 0; r < n; ++r) dlogits(r, labels[static_cast<std::size_t>(r)]) -= 1.0;
  dlogits *= inv_n;

  auto& g = out.grad;
  g.w2 = dlogits.transpose() * t.hidden;
  g.b2 = dlogits.colwise().sum().transpose();
  Eigen::MatrixXd daffine = (dlogits * p.w2).array() * t.mask.array();
  g.norm_bias = daffine.colwise().sum().transpose();
  g.norm_gain = (daffine.array() * t.xhat.array()).colwise().sum().transpose();
  Eigen::MatrixXd dxhat = daffine.array().rowwise() * p.norm_gain.transpose().array();
  Eigen::MatrixXd dpre;
  if (t.batch_stats) {
    const Eigen::RowVectorXd sum_d = dxhat.colwise().sum();
    const Eigen::RowVectorXd sum_dx = (dxhat.array() * t.xhat.array()).colwise().sum();
    Eigen::MatrixXd centered = dxhat * static_cast<double>(n);
    centered.rowwise() -= sum_d;
    centered -= (t.xhat.array().rowwise() * sum_dx.array()).matrix();
    dpre = (centered.array().rowwise() * (t.inv_std.transpose().array() * inv_n)).matrix();
  } else {
    dpre = dxhat.array().rowwise() * t.inv_std.transpose().array();
  }
  g.w1 = dpre.transpose() * x;
  g.b1 = dpre.colwise().sum().transpose();

  if (weight_decay > 0.0) {
    g.w1 += weight_decay * p.w1;
    g.b1 += weight_decay * p.b1;
    g.norm_gain += weight_decay * p.norm_gain;
    g.norm_bias += weight_decay * p.norm_bias;
    g.w2 += weight_decay * p.w2;
    g.b2 += weight_decay * p.b2;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-5;
  Index batch_size = 5;
  Index cosine_period = 5;
  double min_learning_rate = 1e-6;
  Index early_stop_patience = 50;
  double early_stop_accuracy = 0.95;
  Index max_iterations = 5000;
  Index hidden = 128;
  double dropout_rate = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void validate() const {
    if (!(learning_rate > 0.0) || weight_decay < 0.0 || !(min_learning_rate > 0.0)) {
      throw ConfigError("learning rates must be positive and weight decay nonnegative");
    }
    if (batch_size < 1 || cosine_period < 1 || early_stop_patience < 1 || max_iterations < 0 || hidden < 1) {
      throw ConfigError("batch size, period, patience and hidden width must be >= 1");
    }
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw ConfigError("dropout rate must lie in [0, 1)");
  }
};

/// Cosine annealing, stepped once per iteration: lr(t) = min + (base - min) * (1 + cos(pi t / T)) / 2.
inline double cosine_learning_rate(const TrainConfig& c, Index iteration) {
  const double phase = std::numbers::pi * static_cast<double>(iteration) / static_cast<double>(c.cosine_period);
  return c.min_learning_rate + 0.5 * (c.learning_rate - c.min_learning_rate) * (1.0 + std::cos(phase));
}

struct TrainResult {
  HeadParams params;
  double best_loss = 0.0;
  double initial_loss = 0.0;
  double accuracy = 0.0;     // training accuracy of the returned parameters
  Index iterations = 0;
  bool early_stopped = false;
};

namespace detail {

class Adam {
 public:
  explicit Adam(const HeadParams& p) {
    for (auto* m : {&m_, &v_}) {
      m->w1 = Eigen::MatrixXd::Zero(p.w1.rows(), p.w1.cols());
      m->b1 = Eigen::VectorXd::Zero(p.b1.size());
      m->norm_gain = Eigen::VectorXd::Zero(p.hidden());
      m->norm_bias = Eigen::VectorXd::Zero(p.hidden());
      m->w2 = Eigen::MatrixXd::Zero(p.w2.rows(), p.w2.cols());
      m->b2 = Eigen::VectorXd::Zero(p.b2.size());
    }
  }

  void step(HeadParams& p, const HeadGradients& g, double lr, const TrainConfig& c) {
    ++t_;
    const double c1 = 1.0 - std::pow(c.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(c.beta2, static_cast<double>(t_));
    auto upd = [&](auto& param, const auto& grad, auto& m, auto& v) {
      m = c.beta1 * m + (1.0 - c.beta1) * grad;
      v = c.beta2 * v + (1.0 - c.beta2) * grad.cwiseProduct(grad);
      param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + c.adam_epsilon);
    };
    upd(p.w1, g.w1, m_.w1, v_.w1);
    upd(p.b1, g.b1, m_.b1, v_.b1);
    upd(p.norm_gain, g.norm_gain, m_.norm_gain, v_.norm_gain);
    upd(p.norm_bias, g.norm_bias, m_.norm_bias, v_.norm_bias);
    upd(p.w2, g.w2, m_.w2, v_.w2);
    upd(p.b2, g.b2, m_.b2, v_.b2);
  }

 private:
  HeadGradients m_;
  HeadGradients v_;
  Index t_ = 0;
};

inline double accuracy_of(const Probabilities& probs, std::span<const int> labels) {
  Index hits = 0;
  for (Index r = 0; r < probs.rows(); ++r) {
    Index arg = 0;
    probs.row(r).maxCoeff(&arg);
    if (arg == labels[static_cast<std::size_t>(r)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(probs.rows());
}

}  // namespace detail

/// Trains a freshly initialized head on the labeled pixels.
///
/// One iteration is one mini-batch step (a full-batch step when fewer than
/// `batch_size` records exist). After every step the inference-mode loss and
/// accuracy over the whole labeled set are measured; training stops once the
/// loss has not improved for `early_stop_patience` iterations while accuracy
/// exceeds `early_stop_accuracy`, or at `max_iterations`. The best-loss
/// parameters (initialization included) are returned.
inline TrainResult train_head(const FeatureMatrix& features, std::span<const int> labels, Index n_classes,
                              const TrainConfig& config, std::uint64_t seed) {
  config.validate();
  DALD_REQUIRE(features.rows() > 0, "cannot train on an empty labeled set");
  DALD_REQUIRE(features.rows() == static_cast<Index>(labels.size()), "feature and label counts differ");
  for (int y : labels) {
    if (y < 0 || y >= n_classes) throw LabelError("class id " + std::to_string(y) + " outside [0, " +
                                                  std::to_string(n_classes) + ")");
  }
  const Index n = features.rows();
  HeadParams params = init_head(features.cols(), config.hidden, n_classes, seed);
  detail::Adam adam(params);

  TrainResult out;
  {
    const auto probs = forward(params, features);
    out.initial_loss = cross_entropy(probs, labels);
    out.best_loss = out.initial_loss;
    out.accuracy = detail::accuracy_of(probs, labels);
    out.params = params;
  }

  const Index batch = std::min(config.batch_size, n);
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  Engine shuffle_rng = make_engine({stream::kShuffle, seed});
  Index cursor = n;  // forces a shuffle before the first mini-batch
  FeatureMatrix xb(batch, features.cols());
  std::vector<int> yb(static_cast<std::size_t>(batch));
  Index since_best = 0;

  for (Index it = 0; it < config.max_iterations; ++it) {
    if (batch == n) {
      xb = features;
      std::copy(labels.begin(), labels.end(), yb.begin());
    } else {
      if (cursor + batch > n) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        cursor = 0;
      }
      for (Index b = 0; b < batch; ++b) {
        const Index src = order[static_cast<std::size_t>(cursor + b)];
        xb.row(b) = features.row(src);
        yb[static_cast<std::size_t>(b)] = labels[static_cast<std::size_t>(src)];
      }
      cursor += batch;
    }

    const std::uint64_t step_seed = derive_seed({seed, static_cast<std::uint64_t>(it)});
    auto lg = loss_and_gradient(params, xb, yb, config.weight_decay, config.dropout_rate, step_seed);
    adam.step(params, lg.grad, cosine_learning_rate(config, it), config);
    if (lg.trace.batch_stats) {
      const double bn = static_cast<double>(batch);
      params.running_mean = (1.0 - kNormMomentum) * params.running_mean + kNormMomentum * lg.trace.batch_mean;
      params.running_var =
          (1.0 - kNormMomentum) * params.running_var + kNormMomentum * (lg.trace.batch_var * (bn / (bn - 1.0)));
    }

    const auto probs = forward(params, features);
    const double loss = cross_entropy(probs, labels);
    const double acc = detail::accuracy_of(probs, labels);
    out.iterations = it + 1;
    if (loss < out.best_loss) {
      out.best_loss = loss;
      out.params = params;
      out.accuracy = acc;
      since_best = 0;
    } else {
      ++since_best;
    }
    if (since_best >= config.early_stop_patience && acc > config.early_stop_accuracy) {
      out.early_stopped = true;
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
//
//   "DALDHEAD" | u32 version | u64 D | u64 hidden | u64 C |
//   w1 (row-major) b1 norm_gain norm_bias running_mean running_var w2 (row-major) b2
//
// Integers and float64 values are little-endian.

inline constexpr std::array<char, 8> kCheckpointMagic{'D', 'A', 'L', 'D', 'H', 'E', 'A', 'D'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class T>
void put_le(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<unsigned char, sizeof(T)> bytes{};
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <class T>
T get_le(std::istream& in) {
  std::array<unsigned char, sizeof(T)> bytes{};
  if (!in.read(reinterpret_cast<char*>(bytes.data()), sizeof(T))) throw FormatError("truncated checkpoint");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

}  // namespace detail

inline void write_checkpoint(const HeadParams& p, std::ostream& out) {
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(p.input_dim()));
  detail::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(p.hidden()));
  detail::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(p.classes()));
  auto mat = [&](const Eigen::MatrixXd& m) {
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c) detail::put_le<double>(out, m(r, c));
  };
  auto vec = [&](const Eigen::VectorXd& v) {
    for (Index i = 0; i < v.size(); ++i) detail::put_le<double>(out, v[i]);
  };
  mat(p.w1);
  vec(p.b1);
  vec(p.norm_gain);
  vec(p.norm_bias);
  vec(p.running_mean);
  vec(p.running_var);
  mat(p.w2);
  vec(p.b2);
}

inline HeadParams read_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kCheckpointMagic) throw FormatError("not a head checkpoint");
  if (detail::get_le<std::uint32_t>(in) != kCheckpointVersion) throw FormatError("unsupported checkpoint version");
  const auto d = static_cast<Index>(detail::get_le<std::uint64_t>(in));
  const auto h = static_cast<Index>(detail::get_le<std::uint64_t>(in));
  const auto c = static_cast<Index>(detail::get_le<std::uint64_t>(in));
  if (d <= 0 || h <= 0 || c < 2 || d > (1 << 24) || h > (1 << 24) || c > (1 << 24)) {
    throw FormatError("checkpoint has invalid dimensions");
  }
  HeadParams p;
  auto mat = [&](Eigen::MatrixXd& m, Index rows, Index cols) {
    m.resize(rows, cols);
    for (Index r = 0; r < rows; ++r)
      for (Index k = 0; k < cols; ++k) m(r, k) = detail::get_le<double>(in);
  };
  auto vec = [&](Eigen::VectorXd& v, Index size) {
    v.resize(size);
    for (Index i = 0; i < size; ++i) v[i] = detail::get_le<double>(in);
  };
  mat(p.w1, h, d);
  vec(p.b1, h);
  vec(p.norm_gain, h);
  vec(p.norm_bias, h);
  vec(p.running_mean, h);
  vec(p.running_var, h);
  mat(p.w2, c, h);
  vec(p.b2, c);
  if (!p.valid()) throw FormatError("checkpoint holds invalid parameters");
  return p;
}

inline void save_checkpoint(const HeadParams& p, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write checkpoint '" + path + "'");
  write_checkpoint(p, out);
  if (!out) throw FormatError("failed writing checkpoint '" + path + "'");
}

inline HeadParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint '" + path + "'");
  return read_checkpoint(in);
}

}  // namespace dald
