#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dald/acquisition.hpp"
#include "dald/coverage.hpp"
#include "dald/error.hpp"
#include "dald/feature_pool.hpp"
#include "dald/head.hpp"
#include "dald/kernel.hpp"
#include "dald/metrics.hpp"
#include "dald/random.hpp"

namespace dald {

/// After round `after_round`, the candidate stage is switched off and
/// acquisition continues with `method`.
struct PhaseSwitch {
  Index after_round = 10;
  Method method = Method::kMargin;
};

struct RoundConfig {
  Index rounds = 10;
  std::optional<Index> budget;     // pixels per round; default max(1, round(budget_fraction * N))
  double budget_fraction = 0.1;
  CandidateConfig candidates;      // K, global fraction, kernel
  AcquisitionConfig acquisition;
  bool stage1_enabled = true;
  std::optional<PhaseSwitch> schedule;
  TrainConfig train;
  std::vector<Index> eval_indices;  // empty: every pixel with ground truth

  [[nodiscard]] Index budget_for(const FeaturePool& pool) const {
    if (budget) return *budget;
    const auto b = static_cast<Index>(std::llround(budget_fraction * static_cast<double>(pool.num_images())));
    return std::max<Index>(1, b);
  }

  void validate() const {
    if (rounds < 1) throw ConfigError("rounds must be >= 1");
    if (budget && *budget < 1) throw ConfigError("budget must be >= 1");
    if (!budget && !(budget_fraction > 0.0)) throw ConfigError("budget fraction must be > 0");
    if (candidates.per_image < 1) throw ConfigError("K must be >= 1");
    if (!(candidates.global_fraction > 0.0 && candidates.global_fraction <= 1.0)) {
      throw ConfigError("global fraction must lie in (0, 1]");
    }
    candidates.kernel.validate();
    acquisition.validate();
    if (schedule) {
      if (schedule->after_round < 0) throw ConfigError("schedule switch round must be >= 0");
      AcquisitionConfig later = acquisition;
      later.method = schedule->method;
      later.validate();
    }
    train.validate();
  }

  /// Method and stage-1 flag in effect during round r (1-based).
  [[nodiscard]] std::pair<Method, bool> phase(Index round) const {
    if (schedule && round > schedule->after_round) return {schedule->method, false};
    return {acquisition.method, stage1_enabled};
  }
};

struct MetricsRecord {
  Index round = 0;
  double pixel_accuracy = 0.0;
  double miou = 0.0;
  std::vector<std::optional<double>> per_class_iou;
  Index labeled_count = 0;
  double wall_time = 0.0;  // seconds spent in the round
};

struct LabeledPixel {
  Index index = 0;
  int label = 0;
  friend bool operator==(const LabeledPixel&, const LabeledPixel&) = default;
};

/// Bookkeeping of one active-learning run.
struct RoundState {
  Index round = 0;
  std::vector<LabeledPixel> labeled;   // acquisition order
  std::vector<Index> unlabeled;        // ascending
  std::optional<HeadParams> head;
  std::vector<MetricsRecord> history;
  std::vector<Index> last_batch;
  std::vector<std::string> notes;

  static RoundState initial(const FeaturePool& pool) {
    RoundState s;
    s.unlabeled.resize(static_cast<std::size_t>(pool.size()));
    for (Index i = 0; i < pool.size(); ++i) s.unlabeled[static_cast<std::size_t>(i)] = i;
    return s;
  }

  [[nodiscard]] std::vector<Index> labeled_indices() const {
    std::vector<Index> out;
    out.reserve(labeled.size());
    for (const auto& l : labeled) out.push_back(l.index);
    return out;
  }
};

namespace detail {

inline std::vector<Index> uniform_pick(std::span<const Index> from, Index b, std::uint64_t seed) {
  std::vector<Index> pool(from.begin(), from.end());
  Engine rng = make_engine({stream::kRandomPick, seed});
  for (Index i = 0; i < b; ++i) {
    std::uniform_int_distribution<Index> pick(i, static_cast<Index>(pool.size()) - 1);
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick(rng))]);
  }
  pool.resize(static_cast<std::size_t>(b));
  return pool;
}

}  // namespace detail

inline std::uint64_t round_seed(std::uint64_t experiment_seed, Index round) {
  return derive_seed({stream::kRound, experiment_seed, static_cast<std::uint64_t>(round)});
}

/// The b pixels acquired in round `state.round + 1`.
///
/// With the candidate stage on, scores are computed only on the candidate
/// pool M; otherwise on every unlabeled pixel. Before any head exists a
/// two-stage run takes the first b global herding picks (largest coverage
/// gains) and a one-stage run samples uniformly.
inline std::vector<Index> select_batch(const RoundState& state, const FeaturePool& pool,
                                       const StochasticFeatureProvider& provider, const RoundConfig& config,
                                       std::uint64_t seed, std::vector<std::string>* notes = nullptr) {
  const Index r = state.round + 1;
  const Index b = config.budget_for(pool);
  const auto [method, stage1] = config.phase(r);
  const auto labeled = state.labeled_indices();

  std::vector<Index> candidates;
  if (stage1) {
    auto cp = local_then_global(pool, labeled, config.candidates, derive_seed({seed, 2}));
    if (notes) notes->insert(notes->end(), cp.notes.begin(), cp.notes.end());
    candidates = std::move(cp.selected);
  } else {
    candidates = state.unlabeled;
  }
  if (b > static_cast<Index>(candidates.size())) {
    throw BudgetError("round " + std::to_string(r) + ": budget " + std::to_string(b) + " exceeds " +
                      std::to_string(candidates.size()) + " candidates");
  }

  const bool cold = needs_head(method) && !state.head.has_value();
  if (cold && stage1) return {candidates.begin(), candidates.begin() + b};
  if (cold || method == Method::kRandom) return detail::uniform_pick(candidates, b, derive_seed({seed, 4}));
  // Ascending order: every rule below breaks ties by the lower pool index.
  std::sort(candidates.begin(), candidates.end());

  if (method == Method::kCoreset) return kcenter_greedy(pool.features(), candidates, labeled, b);
  if (method == Method::kMaxHerding) {
    const double sigma = resolve_bandwidth(config.candidates.kernel, pool.features(), candidates, derive_seed({seed, 5}));
    return maxherding_select(pool.features(), candidates, labeled, b, sigma).selected;
  }

  AcquisitionConfig acq = config.acquisition;
  acq.method = method;
  acq.seed = derive_seed({seed, 1});
  const auto scores = score_pixels(pool, candidates, *state.head, provider, acq);
  const auto picks = is_power(method) ? power_sample(scores, acq.power_beta, b, derive_seed({seed, 6}))
                                      : top_b(scores, b);
  std::vector<Index> out;
  out.reserve(picks.size());
  for (Index k : picks) out.push_back(candidates[static_cast<std::size_t>(k)]);
  return out;
}

/// One round: select, annotate, retrain from scratch, evaluate.
inline RoundState run_round(RoundState state, const FeaturePool& pool, const AnnotationOracle& oracle,
                            const StochasticFeatureProvider& provider, const RoundConfig& config,
                            std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  const Index r = state.round + 1;
  const Index b = config.budget_for(pool);
  if (b > static_cast<Index>(state.unlabeled.size())) {
    throw BudgetError("round " + std::to_string(r) + ": budget " + std::to_string(b) + " exceeds " +
                      std::to_string(state.unlabeled.size()) + " unlabeled pixels");
  }
  state.notes.clear();
  state.last_batch = select_batch(state, pool, provider, config, seed, &state.notes);

  std::vector<Index> batch = state.last_batch;
  std::sort(batch.begin(), batch.end());
  DALD_REQUIRE(std::adjacent_find(batch.begin(), batch.end()) == batch.end(), "batch holds a duplicate pixel");
  for (Index p : state.last_batch) {
    DALD_REQUIRE(std::binary_search(state.unlabeled.begin(), state.unlabeled.end(), p),
                 "selected pixel is not unlabeled");
    state.labeled.push_back({p, oracle.annotate(p)});
  }
  std::vector<Index> rest;
  rest.reserve(state.unlabeled.size() - batch.size());
  std::set_difference(state.unlabeled.begin(), state.unlabeled.end(), batch.begin(), batch.end(),
                      std::back_inserter(rest));
  state.unlabeled = std::move(rest);

  FeatureMatrix x(static_cast<Index>(state.labeled.size()), pool.dim());
  std::vector<int> y(state.labeled.size());
  for (std::size_t i = 0; i < state.labeled.size(); ++i) {
    x.row(static_cast<Index>(i)) = pool.feature(state.labeled[i].index);
    y[i] = state.labeled[i].label;
  }
  TrainConfig train = config.train;
  // Dropout ensembles need a head trained with dropout; check the method of the next round.
  if (uses_dropout(config.phase(r + 1).first)) train.dropout_rate = config.acquisition.dropout_rate;
  state.head = train_head(x, y, pool.num_classes(), train, derive_seed({seed, 3})).params;

  std::vector<Index> eval = config.eval_indices;
  if (eval.empty()) {
    for (Index i = 0; i < pool.size(); ++i)
      if (pool.has_label(i)) eval.push_back(i);
  }
  auto ev = evaluate(*state.head, pool, oracle, eval);
  state.round = r;
  const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
  state.history.push_back(
      {r, ev.pixel_accuracy, ev.miou, std::move(ev.per_class_iou), static_cast<Index>(state.labeled.size()),
       elapsed.count()});
  return state;
}

}  // namespace dald
