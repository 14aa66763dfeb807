#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <queue>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

#include "dald/error.hpp"
#include "dald/feature_pool.hpp"
#include "dald/kernel.hpp"
#include "dald/random.hpp"

namespace dald {

/// Running generalized coverage of a reference set U:
///
///   C(S) = 1/|U| * sum_{u in U} max_{s in L u S} k(u, s)
///
/// `max_sim[i]` caches the inner max for reference entry i. An empty max is 0.
/// Gain queries reuse internal scratch buffers: one instance per thread.
/// Cache entries are rounded upward when stored in a narrower type, so a point
/// that duplicates something already selected has a gain of exactly zero.
/// Coverage gains closer than this are ties.
inline constexpr double kHerdingTieTolerance = 1e-12;

template <class Scalar = double>
class CoverageState {
 public:
  CoverageState(const FeatureMatrix& features, std::vector<Index> reference, double sigma,
                std::span<const Index> conditioning = {})
      : features_(&features), reference_(std::move(reference)), sigma_(sigma) {
    DALD_REQUIRE(!reference_.empty(), "coverage needs a nonempty reference set");
    DALD_REQUIRE(sigma > 0.0, "kernel bandwidth must be > 0");
    inv_sigma2_ = 1.0 / (sigma * sigma);
    const auto n = static_cast<Index>(reference_.size());
    ref_by_dim_.resize(n, features.cols());
    for (Index i = 0; i < n; ++i) {
      const Index r = reference_[static_cast<std::size_t>(i)];
      DALD_REQUIRE(r >= 0 && r < features.rows(), "reference index out of range");
      ref_by_dim_.row(i) = features.row(r);
    }
    max_sim_ = Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(n);
    dbuf_.resize(n);
    kbuf_.resize(n);
    for (Index c : conditioning) {
      DALD_REQUIRE(c >= 0 && c < features.rows(), "conditioning index out of range");
      if (blocked_.insert(c).second) absorb(c);
    }
  }

  /// Mean of the cached maxima.
  [[nodiscard]] double value() const {
    long double acc = 0.0L;
    for (Scalar m : max_sim_) acc += static_cast<long double>(m);
    return static_cast<double>(acc / static_cast<long double>(max_sim_.size()));
  }

  /// Coverage increase from adding `candidate`. One kernel row over U.
  [[nodiscard]] double gain(Index candidate) const {
    return static_cast<double>(raw_gain(candidate) / static_cast<long double>(max_sim_.size()));
  }

  /// Unnormalized gain: sum over U of max(0, k(u, c) - max_sim[u]).
  [[nodiscard]] long double raw_gain(Index candidate) const {
    kernel_column(candidate);
    return static_cast<long double>((kbuf_ - max_sim_.template cast<double>()).max(0.0).sum());
  }

  void add(Index candidate) {
    DALD_REQUIRE(candidate >= 0 && candidate < features_->rows(), "candidate index out of range");
    DALD_REQUIRE(blocked_.insert(candidate).second, "candidate already selected or in the conditioning set");
    absorb(candidate);
    selected_.push_back(candidate);
  }

  [[nodiscard]] bool blocked(Index i) const { return blocked_.contains(i); }
  [[nodiscard]] const Eigen::Array<Scalar, Eigen::Dynamic, 1>& max_sim() const noexcept { return max_sim_; }
  [[nodiscard]] const std::vector<Index>& selected() const noexcept { return selected_; }
  [[nodiscard]] const std::vector<Index>& reference() const noexcept { return reference_; }
  [[nodiscard]] double sigma() const noexcept { return sigma_; }

 private:
  static Scalar round_up(double v) {
    auto s = static_cast<Scalar>(v);
    if (static_cast<double>(s) < v) s = std::nextafter(s, std::numeric_limits<Scalar>::infinity());
    return s;
  }

  // k(u, point) for every reference entry u, into kbuf_.
  void kernel_column(Index point) const {
    const auto row = features_->row(point);
    dbuf_.setZero();
    for (Index j = 0; j < ref_by_dim_.cols(); ++j) dbuf_ += (ref_by_dim_.col(j).array() - row(j)).square();
    kbuf_ = (dbuf_ * -inv_sigma2_).exp();
  }

  void absorb(Index point) {
    kernel_column(point);
    for (Index i = 0; i < kbuf_.size(); ++i) {
      const Scalar k = round_up(kbuf_(i));
      if (k > max_sim_(i)) max_sim_(i) = k;
    }
  }

  const FeatureMatrix* features_;
  std::vector<Index> reference_;
  Eigen::MatrixXd ref_by_dim_;  // column-major: one contiguous array per dimension
  mutable Eigen::ArrayXd dbuf_;
  mutable Eigen::ArrayXd kbuf_;
  double sigma_;
  double inv_sigma2_ = 1.0;
  Eigen::Array<Scalar, Eigen::Dynamic, 1> max_sim_;
  std::vector<Index> selected_;
  std::unordered_set<Index> blocked_;
};

struct HerdingResult {
  std::vector<Index> selected;
  std::vector<double> gains;  // coverage increase of each pick, in pick order
  double coverage = 0.0;      // coverage after the last pick
};

namespace detail {

inline std::vector<Index> without(std::span<const Index> items, std::span<const Index> excluded) {
  std::unordered_set<Index> ex(excluded.begin(), excluded.end());
  std::unordered_set<Index> seen;
  std::vector<Index> out;
  out.reserve(items.size());
  for (Index i : items) {
    if (!ex.contains(i) && seen.insert(i).second) out.push_back(i);
  }
  return out;
}

}  // namespace detail

/// Greedy maximizer of generalized coverage over `reference`, conditioned on
/// `conditioning`. Each step picks the candidate with the largest coverage
/// gain; ties go to the lowest pool index.
///
/// Gains only shrink as the selection grows, so stale gains are valid upper
/// bounds and candidates are re-evaluated lazily. The result is identical to
/// re-evaluating every candidate at every step.
template <class Scalar = double>
HerdingResult maxherding_select(const FeatureMatrix& features, std::span<const Index> reference,
                                std::span<const Index> conditioning, Index budget, double sigma,
                                std::span<const Index> candidates = {}) {
  DALD_REQUIRE(budget >= 0, "budget must be nonnegative");
  const auto pool = detail::without(candidates.empty() ? reference : candidates, conditioning);
  if (budget > static_cast<Index>(pool.size())) {
    throw BudgetError("herding budget " + std::to_string(budget) + " exceeds " + std::to_string(pool.size()) +
                      " available candidates");
  }
  CoverageState<Scalar> state(features, std::vector<Index>(reference.begin(), reference.end()), sigma, conditioning);
  HerdingResult out;
  if (budget == 0) {
    out.coverage = state.value();
    return out;
  }

  struct Entry {
    long double bound;
    Index index;
    Index stamp;
  };
  auto worse = [](const Entry& a, const Entry& b) {
    if (a.bound != b.bound) return a.bound < b.bound;
    return a.index > b.index;
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(worse)> heap(worse);
  for (Index c : pool) heap.push({state.raw_gain(c), c, 0});

  const auto n_ref = static_cast<long double>(reference.size());
  const long double tol = kHerdingTieTolerance * n_ref;
  std::vector<Entry> near;
  for (Index step = 0; step < budget; ++step) {
    Entry top = heap.top();
    heap.pop();
    while (top.stamp != step) {
      heap.push({state.raw_gain(top.index), top.index, step});
      top = heap.top();
      heap.pop();
    }
    // Gains within tolerance of the best count as ties: lowest index wins.
    near.clear();
    const long double floor = top.bound - tol;
    while (!heap.empty() && heap.top().bound >= floor) {
      Entry e = heap.top();
      heap.pop();
      if (e.stamp != step) e = {state.raw_gain(e.index), e.index, step};
      if (e.bound >= floor && e.index < top.index) std::swap(e, top);
      near.push_back(e);
    }
    for (const Entry& e : near) heap.push(e);
    state.add(top.index);
    out.selected.push_back(top.index);
    out.gains.push_back(static_cast<double>(top.bound / n_ref));
  }
  out.coverage = state.value();
  return out;
}

/// Farthest-point (k-center) greedy over `reference \ conditioning`. With an
/// empty conditioning set the first pick is the lowest candidate index.
inline std::vector<Index> kcenter_greedy(const FeatureMatrix& features, std::span<const Index> reference,
                                         std::span<const Index> conditioning, Index budget) {
  DALD_REQUIRE(budget >= 0, "budget must be nonnegative");
  auto cands = detail::without(reference, conditioning);
  if (budget > static_cast<Index>(cands.size())) {
    throw BudgetError("k-center budget " + std::to_string(budget) + " exceeds " + std::to_string(cands.size()) +
                      " available candidates");
  }
  std::sort(cands.begin(), cands.end());
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> nearest(cands.size(), kInf);
  std::vector<char> taken(cands.size(), 0);
  auto relax = [&](Index point) {
    for (std::size_t i = 0; i < cands.size(); ++i) {
      nearest[i] = std::min(nearest[i], squared_distance(features.row(cands[i]), features.row(point)));
    }
  };
  for (Index c : conditioning) relax(c);

  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(budget));
  for (Index step = 0; step < budget; ++step) {
    std::size_t best = cands.size();
    for (std::size_t i = 0; i < cands.size(); ++i) {
      if (taken[i]) continue;
      if (best == cands.size() || nearest[i] > nearest[best]) best = i;
    }
    taken[best] = 1;
    out.push_back(cands[best]);
    relax(cands[best]);
  }
  return out;
}

/// Memory-bounded herding: the reference set is split into `splits` seeded
/// random parts that are herded one after another, each conditioned on every
/// earlier pick. Sub-budgets are proportional to part size (largest
/// remainder). The coverage cache only ever spans one part.
template <class Scalar = double>
std::vector<Index> split_and_herd(const FeatureMatrix& features, std::span<const Index> reference, Index budget,
                                  Index splits, double sigma, std::uint64_t seed,
                                  std::span<const Index> conditioning = {}) {
  if (splits < 1) throw ConfigError("splits must be >= 1");
  if (splits > budget) throw ConfigError("splits (" + std::to_string(splits) + ") exceed budget (" +
                                         std::to_string(budget) + ")");
  if (splits > static_cast<Index>(reference.size())) throw ConfigError("more splits than reference points");
  const auto available = detail::without(reference, conditioning);
  if (budget > static_cast<Index>(available.size())) {
    throw BudgetError("split herding budget " + std::to_string(budget) + " exceeds " +
                      std::to_string(available.size()) + " available candidates");
  }
  if (splits == 1) return maxherding_select<Scalar>(features, reference, conditioning, budget, sigma).selected;

  std::vector<Index> order(reference.begin(), reference.end());
  Engine rng = make_engine({stream::kSplit, seed});
  std::shuffle(order.begin(), order.end(), rng);
  const auto n = static_cast<Index>(order.size());
  std::vector<std::vector<Index>> parts(static_cast<std::size_t>(splits));
  for (Index s = 0, begin = 0; s < splits; ++s) {
    const Index len = n / splits + (s < n % splits ? 1 : 0);
    parts[static_cast<std::size_t>(s)].assign(order.begin() + begin, order.begin() + begin + len);
    std::sort(parts[static_cast<std::size_t>(s)].begin(), parts[static_cast<std::size_t>(s)].end());
    begin += len;
  }

  // Largest-remainder apportionment of the budget over part sizes.
  std::vector<Index> quota(parts.size());
  std::vector<std::pair<Index, std::size_t>> remainders;  // (remainder numerator, part)
  Index assigned = 0;
  for (std::size_t s = 0; s < parts.size(); ++s) {
    const Index num = budget * static_cast<Index>(parts[s].size());
    quota[s] = num / n;
    assigned += quota[s];
    remainders.emplace_back(num % n, s);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (Index k = 0; k < budget - assigned; ++k) ++quota[remainders[static_cast<std::size_t>(k)].second];

  std::vector<Index> cond(conditioning.begin(), conditioning.end());
  std::vector<Index> out;
  Index carry = 0;
  // A second sweep only happens when conditioning starved an early part.
  while (static_cast<Index>(out.size()) < budget) {
    for (std::size_t s = 0; s < parts.size() && static_cast<Index>(out.size()) < budget; ++s) {
      const auto open = detail::without(parts[s], cond);
      const Index want = quota[s] + carry;
      quota[s] = 0;
      const Index take = std::min<Index>(want, static_cast<Index>(open.size()));
      carry = want - take;
      if (take == 0) continue;
      const auto picked = maxherding_select<Scalar>(features, parts[s], cond, take, sigma).selected;
      out.insert(out.end(), picked.begin(), picked.end());
      cond.insert(cond.end(), picked.begin(), picked.end());
    }
  }
  return out;
}

/// Stage-1 candidate pool: per-image herding, then herding across the merged set.
struct CandidatePool {
  std::vector<Index> initial;    // union of per-image representatives, image order
  std::vector<Index> selected;   // global herding picks, pick order
  std::vector<double> gains;     // coverage gain of each global pick
  double global_sigma = 0.0;
  std::vector<std::string> notes;
};

struct CandidateConfig {
  Index per_image = 50;
  double global_fraction = 0.5;
  KernelConfig kernel = KernelConfig::median();
  bool condition_global_on_labeled = true;
};

/// Builds the candidate pool M from the unlabeled pixels.
///
/// Per image: reference and candidates are the image's unlabeled pixels,
/// conditioned on its labeled pixels; up to `per_image` picks each (clamped to
/// the unlabeled count, images without unlabeled pixels are skipped with a
/// note). Globally: herding over the merged set, conditioned on all labeled
/// pixels, keeps ceil(global_fraction * |M0|) picks.
inline CandidatePool local_then_global(const FeaturePool& pool, std::span<const Index> labeled,
                                       const CandidateConfig& config, std::uint64_t seed) {
  if (config.per_image < 1) throw ConfigError("per-image candidate count K must be >= 1");
  if (!(config.global_fraction > 0.0 && config.global_fraction <= 1.0)) {
    throw ConfigError("global fraction must lie in (0, 1]");
  }
  config.kernel.validate();

  std::vector<char> is_labeled(static_cast<std::size_t>(pool.size()), 0);
  for (Index i : labeled) {
    DALD_REQUIRE(i >= 0 && i < pool.size(), "labeled index out of range");
    is_labeled[static_cast<std::size_t>(i)] = 1;
  }

  CandidatePool out;
  std::vector<Index> all_unlabeled;
  for (Index img = 0; img < pool.num_images(); ++img) {
    std::vector<Index> open;
    std::vector<Index> done;
    for (Index p : pool.image_pixels(img)) (is_labeled[static_cast<std::size_t>(p)] ? done : open).push_back(p);
    all_unlabeled.insert(all_unlabeled.end(), open.begin(), open.end());
    if (open.empty()) {
      out.notes.push_back("image " + std::to_string(img) + ": no unlabeled pixels, skipped");
      continue;
    }
    const Index k = std::min<Index>(config.per_image, static_cast<Index>(open.size()));
    if (k < config.per_image) {
      out.notes.push_back("image " + std::to_string(img) + ": K clamped to " + std::to_string(k));
    }
    const double sigma = resolve_bandwidth(config.kernel, pool.features(), open,
                                           derive_seed({seed, static_cast<std::uint64_t>(img)}));
    const auto picks = maxherding_select(pool.features(), open, done, k, sigma).selected;
    out.initial.insert(out.initial.end(), picks.begin(), picks.end());
  }
  if (out.initial.empty()) return out;

  out.global_sigma = resolve_bandwidth(config.kernel, pool.features(), all_unlabeled,
                                       derive_seed({seed, 0xfeedULL}));
  const auto m0 = static_cast<double>(out.initial.size());
  const auto keep = std::clamp<Index>(static_cast<Index>(std::ceil(config.global_fraction * m0 - 1e-9)), 1,
                                      static_cast<Index>(out.initial.size()));
  const std::span<const Index> cond = config.condition_global_on_labeled ? labeled : std::span<const Index>{};
  auto global = maxherding_select(pool.features(), out.initial, cond, keep, out.global_sigma);
  out.selected = std::move(global.selected);
  out.gains = std::move(global.gains);
  return out;
}

}  // namespace dald
