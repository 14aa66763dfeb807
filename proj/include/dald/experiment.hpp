#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dald/error.hpp"
#include "dald/feature_pool.hpp"
#include "dald/head.hpp"
#include "dald/loop.hpp"

namespace dald {

inline constexpr std::string_view kMetricsHeader = "seed,round,labeled_count,pixel_accuracy,miou,wall_time_s";

/// Mean and sample standard deviation across seeds for one round.
struct AggregateRow {
  Index round = 0;
  double labeled_count = 0.0;
  double accuracy_mean = 0.0;
  double accuracy_std = 0.0;
  double miou_mean = 0.0;
  double miou_std = 0.0;
  Index seeds = 0;
};

struct ExperimentResult {
  std::vector<std::uint64_t> seeds;
  std::vector<std::vector<MetricsRecord>> curves;  // per seed, per round
  std::vector<AggregateRow> aggregate;
};

struct MetricsRow {
  std::uint64_t seed = 0;
  Index round = 0;
  Index labeled_count = 0;
  double pixel_accuracy = 0.0;
  double miou = 0.0;
  double wall_time = 0.0;
};

namespace detail {

inline std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return {buf, res.ptr};
}

inline std::string fmt_time(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, 6);
  return {buf, res.ptr};
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

inline std::string metrics_line(std::uint64_t seed, const MetricsRecord& m) {
  return std::to_string(seed) + ',' + std::to_string(m.round) + ',' + std::to_string(m.labeled_count) + ',' +
         fmt(m.pixel_accuracy) + ',' + fmt(m.miou) + ',' + fmt_time(m.wall_time);
}

template <class T>
T parse_field(std::string_view tok, std::string_view what) {
  T v{};
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size()) {
    throw FormatError("malformed " + std::string(what) + " '" + std::string(tok) + "'");
  }
  return v;
}

inline std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace detail

/// Canonical text form of a configuration; stored in checkpoints so a resumed
/// run cannot silently continue under different settings. The round count is
/// left out, so a finished run can be extended.
inline std::string config_fingerprint(const RoundConfig& c, const FeaturePool& pool) {
  std::ostringstream os;
  os << "b=" << c.budget_for(pool) << " K=" << c.candidates.per_image
     << " gf=" << detail::fmt(c.candidates.global_fraction)
     << " kernel=" << (c.candidates.kernel.rule == BandwidthRule::kFixed ? "fixed" : "median") << ':'
     << detail::fmt(c.candidates.kernel.sigma) << ':' << c.candidates.kernel.subsample
     << " cond=" << c.candidates.condition_global_on_labeled << " method=" << method_name(c.acquisition.method)
     << " mc=" << c.acquisition.mc_samples << " beta=" << detail::fmt(c.acquisition.power_beta)
     << " dropout=" << detail::fmt(c.acquisition.dropout_rate) << " stage1=" << c.stage1_enabled;
  if (c.schedule) os << " switch=" << c.schedule->after_round << ':' << method_name(c.schedule->method);
  os << " lr=" << detail::fmt(c.train.learning_rate) << " wd=" << detail::fmt(c.train.weight_decay)
     << " batch=" << c.train.batch_size << " hidden=" << c.train.hidden << " maxit=" << c.train.max_iterations
     << " pool=" << pool.size() << 'x' << pool.dim() << " eval=" << c.eval_indices.size();
  return os.str();
}

// ---------------------------------------------------------------------------
// Round checkpoints: <dir>/round_<r>.state (text) and <dir>/round_<r>.head

inline void save_round_state(const RoundState& s, const std::string& fingerprint, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto stem = dir / ("round_" + std::to_string(s.round));
  if (s.head) save_checkpoint(*s.head, stem.string() + ".head");
  std::ostringstream os;
  os << "dald-round-state 1\n" << "config " << fingerprint << '\n' << "round " << s.round << '\n';
  os << "labeled " << s.labeled.size() << '\n';
  for (const auto& l : s.labeled) os << l.index << ' ' << l.label << '\n';
  os << "history " << s.history.size() << '\n';
  for (const auto& m : s.history) {
    os << m.round << ' ' << detail::fmt(m.pixel_accuracy) << ' ' << detail::fmt(m.miou) << ' ' << m.labeled_count
       << ' ' << detail::fmt(m.wall_time) << ' ' << m.per_class_iou.size();
    for (const auto& v : m.per_class_iou) os << ' ' << (v ? detail::fmt(*v) : std::string("-"));
    os << '\n';
  }
  // Written last and renamed into place so a crash never leaves a partial state.
  const auto tmp = stem.string() + ".state.tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    out << os.str();
    if (!out) throw FormatError("failed writing round state '" + tmp + "'");
  }
  std::filesystem::rename(tmp, stem.string() + ".state");
}

inline RoundState load_round_state(const FeaturePool& pool, const std::string& fingerprint,
                                   const std::filesystem::path& dir, Index round) {
  const auto stem = dir / ("round_" + std::to_string(round));
  std::ifstream in(stem.string() + ".state", std::ios::binary);
  if (!in) throw FormatError("cannot open round state in '" + dir.string() + "'");
  std::string line;
  auto expect = [&](std::string_view key) {
    if (!std::getline(in, line) || !line.starts_with(key)) {
      throw FormatError("round state: expected '" + std::string(key) + "'");
    }
    return line.substr(key.size());
  };
  if (expect("dald-round-state ") != "1") throw FormatError("round state: unsupported version");
  if (expect("config ") != fingerprint) {
    throw ConfigError("checkpoint in '" + dir.string() + "' was written under a different configuration");
  }
  RoundState s;
  s.round = detail::parse_field<Index>(expect("round "), "round");
  const auto n = detail::parse_field<Index>(expect("labeled "), "count");
  std::vector<char> taken(static_cast<std::size_t>(pool.size()), 0);
  for (Index i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw FormatError("round state: truncated labeled list");
    const auto f = detail::split(line, ' ');
    if (f.size() != 2) throw FormatError("round state: bad labeled record");
    LabeledPixel lp{detail::parse_field<Index>(f[0], "index"), detail::parse_field<int>(f[1], "label")};
    if (lp.index < 0 || lp.index >= pool.size() || taken[static_cast<std::size_t>(lp.index)]) {
      throw FormatError("round state: invalid labeled pixel");
    }
    taken[static_cast<std::size_t>(lp.index)] = 1;
    s.labeled.push_back(lp);
  }
  for (Index i = 0; i < pool.size(); ++i)
    if (!taken[static_cast<std::size_t>(i)]) s.unlabeled.push_back(i);
  const auto h = detail::parse_field<Index>(expect("history "), "count");
  for (Index i = 0; i < h; ++i) {
    if (!std::getline(in, line)) throw FormatError("round state: truncated history");
    const auto f = detail::split(line, ' ');
    if (f.size() < 6) throw FormatError("round state: bad history record");
    MetricsRecord m;
    m.round = detail::parse_field<Index>(f[0], "round");
    m.pixel_accuracy = detail::parse_field<double>(f[1], "accuracy");
    m.miou = detail::parse_field<double>(f[2], "miou");
    m.labeled_count = detail::parse_field<Index>(f[3], "count");
    m.wall_time = detail::parse_field<double>(f[4], "time");
    const auto c = detail::parse_field<std::size_t>(f[5], "count");
    if (f.size() != 6 + c) throw FormatError("round state: bad per-class list");
    for (std::size_t k = 0; k < c; ++k) {
      m.per_class_iou.push_back(f[6 + k] == "-" ? std::nullopt
                                                : std::optional<double>(detail::parse_field<double>(f[6 + k], "iou")));
    }
    s.history.push_back(std::move(m));
  }
  if (s.round > 0) s.head = load_checkpoint(stem.string() + ".head");
  return s;
}

/// Highest round r <= max_round with a complete checkpoint in `dir`, or 0.
inline Index latest_checkpoint(const std::filesystem::path& dir, Index max_round) {
  for (Index r = max_round; r >= 1; --r) {
    const auto stem = dir / ("round_" + std::to_string(r));
    if (std::filesystem::exists(stem.string() + ".state") && std::filesystem::exists(stem.string() + ".head")) {
      return r;
    }
  }
  return 0;
}

inline std::vector<AggregateRow> aggregate_rows(const std::vector<MetricsRow>& rows) {
  std::map<Index, std::vector<const MetricsRow*>> by_round;
  for (const auto& r : rows) by_round[r.round].push_back(&r);
  std::vector<AggregateRow> out;
  for (const auto& [round, group] : by_round) {
    std::vector<double> acc, mi, lab;
    for (const auto* r : group) {
      acc.push_back(r->pixel_accuracy);
      mi.push_back(r->miou);
      lab.push_back(static_cast<double>(r->labeled_count));
    }
    out.push_back({round, detail::mean_of(lab), detail::mean_of(acc), detail::sample_std(acc), detail::mean_of(mi),
                   detail::sample_std(mi), static_cast<Index>(group.size())});
  }
  return out;
}

inline void write_aggregate_csv(const std::vector<AggregateRow>& rows, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write '" + path + "'");
  out << "round,labeled_count,pixel_accuracy_mean,pixel_accuracy_std,miou_mean,miou_std,seeds\n";
  for (const auto& r : rows) {
    out << r.round << ',' << detail::fmt(r.labeled_count) << ',' << detail::fmt(r.accuracy_mean) << ','
        << detail::fmt(r.accuracy_std) << ',' << detail::fmt(r.miou_mean) << ',' << detail::fmt(r.miou_std) << ','
        << r.seeds << '\n';
  }
}

inline std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open metrics CSV '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) throw FormatError("metrics CSV has an unexpected header");
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = detail::split(line, ',');
    if (f.size() != 6) throw FormatError("metrics CSV row has " + std::to_string(f.size()) + " fields");
    rows.push_back({detail::parse_field<std::uint64_t>(f[0], "seed"), detail::parse_field<Index>(f[1], "round"),
                    detail::parse_field<Index>(f[2], "labeled_count"), detail::parse_field<double>(f[3], "accuracy"),
                    detail::parse_field<double>(f[4], "miou"), detail::parse_field<double>(f[5], "wall time")});
  }
  return rows;
}

/// Line plot of mean mIoU and pixel accuracy per round as a standalone SVG.
inline void write_curve_svg(const std::vector<AggregateRow>& rows, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write '" + path + "'");
  constexpr double kW = 640, kH = 400, kPad = 50;
  Index max_round = 1;
  for (const auto& r : rows) max_round = std::max(max_round, r.round);
  auto px = [&](Index round) { return kPad + (kW - 2 * kPad) * static_cast<double>(round) / static_cast<double>(max_round); };
  auto py = [&](double v) { return kH - kPad - (kH - 2 * kPad) * std::clamp(v, 0.0, 1.0); };
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<line x1=\"" << kPad << "\" y1=\"" << kH - kPad << "\" x2=\"" << kW - kPad << "\" y2=\"" << kH - kPad
      << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << kPad << "\" y1=\"" << kPad << "\" x2=\"" << kPad << "\" y2=\"" << kH - kPad
      << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << kW / 2 << "\" y=\"" << kH - 10 << "\" text-anchor=\"middle\">round</text>\n";
  auto series = [&](auto value, const char* colour, const char* label, double legend_y) {
    out << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\" points=\"";
    for (const auto& r : rows) out << px(r.round) << ',' << py(value(r)) << ' ';
    out << "\"/>\n<text x=\"" << kW - kPad - 120 << "\" y=\"" << legend_y << "\" fill=\"" << colour << "\">" << label
        << "</text>\n";
  };
  series([](const AggregateRow& r) { return r.miou_mean; }, "#1f77b4", "mIoU (mean)", kPad);
  series([](const AggregateRow& r) { return r.accuracy_mean; }, "#d62728", "pixel acc (mean)", kPad + 18);
  for (int t = 0; t <= 4; ++t) {
    const double v = t / 4.0;
    out << "<text x=\"" << kPad - 8 << "\" y=\"" << py(v) + 4 << "\" text-anchor=\"end\">" << v << "</text>\n";
  }
  out << "</svg>\n";
}

struct ExperimentOutput {
  std::optional<std::filesystem::path> directory;  // metrics.csv, aggregate.csv, seed_<s>/ checkpoints
  bool resume = true;
  std::function<void(std::uint64_t seed, const RoundState&)> on_round;  // progress hook
};

/// Runs `config.rounds` rounds from an empty labeled set for every seed.
///
/// With an output directory, metrics rows are appended to metrics.csv as
/// rounds complete, every round is checkpointed under seed_<s>/, and an
/// interrupted run picks up from its last complete checkpoint.
inline ExperimentResult run_experiment(const FeaturePool& pool, const StochasticFeatureProvider& provider,
                                       const RoundConfig& config, const std::vector<std::uint64_t>& seeds,
                                       const ExperimentOutput& output = {}) {
  config.validate();
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("seeds must be distinct");
  }
  const AnnotationOracle oracle(pool);
  const auto fingerprint = config_fingerprint(config, pool);

  // Checkpoints are read (and their configuration checked) before metrics.csv is touched.
  std::vector<RoundState> states;
  std::vector<std::optional<std::filesystem::path>> seed_dirs;
  for (const auto seed : seeds) {
    auto& dir = seed_dirs.emplace_back();
    if (output.directory) dir = *output.directory / ("seed_" + std::to_string(seed));
    RoundState state = RoundState::initial(pool);
    if (dir && output.resume) {
      if (const Index last = latest_checkpoint(*dir, config.rounds); last > 0) {
        state = load_round_state(pool, fingerprint, *dir, last);
      }
    }
    states.push_back(std::move(state));
  }

  std::ofstream csv;
  if (output.directory) {
    std::filesystem::create_directories(*output.directory);
    csv.open(*output.directory / "metrics.csv", std::ios::binary | std::ios::trunc);
    if (!csv) throw FormatError("cannot write metrics.csv in '" + output.directory->string() + "'");
    csv << kMetricsHeader << '\n' << std::flush;
  }

  ExperimentResult result;
  result.seeds = seeds;
  std::vector<MetricsRow> rows;
  for (std::size_t k = 0; k < seeds.size(); ++k) {
    const auto seed = seeds[k];
    const auto& seed_dir = seed_dirs[k];
    RoundState state = std::move(states[k]);
    auto emit = [&](const MetricsRecord& m) {
      rows.push_back({seed, m.round, m.labeled_count, m.pixel_accuracy, m.miou, m.wall_time});
      if (csv.is_open()) csv << detail::metrics_line(seed, m) << '\n' << std::flush;
    };
    for (const auto& m : state.history) emit(m);
    while (state.round < config.rounds) {
      state = run_round(std::move(state), pool, oracle, provider, config, round_seed(seed, state.round + 1));
      if (seed_dir) save_round_state(state, fingerprint, *seed_dir);
      emit(state.history.back());
      if (output.on_round) output.on_round(seed, state);
    }
    result.curves.push_back(state.history);
  }
  result.aggregate = aggregate_rows(rows);
  if (output.directory) write_aggregate_csv(result.aggregate, (*output.directory / "aggregate.csv").string());
  return result;
}

/// The K x global-fraction sensitivity grid.
struct GridCell {
  Index per_image;
  double global_fraction;
};

inline std::vector<GridCell> sensitivity_grid() {
  std::vector<GridCell> out;
  for (Index k : {20, 50, 100})
    for (double f : {0.25, 0.4, 0.5}) out.push_back({k, f});
  return out;
}

}  // namespace dald
