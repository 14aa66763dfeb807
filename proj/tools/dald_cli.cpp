// dald: pixel active-learning experiments from the command line.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dald/dald.hpp"
#include "dald/testing/oracles.hpp"

namespace fs = std::filesystem;
using namespace dald;

namespace {

struct RunOptions {
  std::string pool_file;
  std::string synthetic;
  std::string samples_file;
  std::optional<double> noise;
  std::string method = "edald";
  Index rounds = 10;
  std::optional<Index> budget;
  double budget_frac = 0.1;
  Index k = 50;
  double global_frac = 0.5;
  Index mc_samples = 5;
  double beta = 1.0;
  std::string seeds = "0";
  std::string out;
  std::string schedule;
  bool stage1 = true;
  bool resume = true;
  std::string eval_file;
  std::optional<double> sigma;
  bool quiet = false;
};

void add_run_options(CLI::App& cmd, RunOptions& o) {
  auto* src = cmd.add_option_group("source");
  src->add_option("--pool", o.pool_file, "Feature file to load the pool from");
  src->add_option("--synthetic", o.synthetic,
                  "Synthetic task, comma-separated key=value: geometry (voronoi|stripes|blobs), images, side, "
                  "classes, dim, spread, seed");
  src->require_option(0, 1);
  cmd.add_option("--samples", o.samples_file, "Replay file of stored feature draws (pixel sample f1 ... fD)");
  cmd.add_option("--noise", o.noise, "Gaussian provider noise scale; 0 is deterministic (default 0.1 x median norm)")
      ->check(CLI::NonNegativeNumber);
  cmd.add_option("--method", o.method, "Acquisition method")->capture_default_str();
  cmd.add_option("--rounds", o.rounds, "Number of rounds")->capture_default_str();
  auto* b = cmd.add_option("--budget", o.budget, "Pixels per round");
  cmd.add_option("--budget-frac", o.budget_frac, "Pixels per round as a fraction of the image count")
      ->capture_default_str()
      ->excludes(b);
  cmd.add_option("--K", o.k, "Per-image herding picks")->capture_default_str();
  cmd.add_option("--global-frac", o.global_frac, "Share of the per-image picks kept globally")->capture_default_str();
  cmd.add_option("--mc-samples", o.mc_samples, "Stochastic passes per pixel")->capture_default_str();
  cmd.add_option("--beta", o.beta, "Power-sampling exponent")->capture_default_str();
  cmd.add_option("--seeds", o.seeds, "Seeds, comma separated")->capture_default_str();
  cmd.add_option("--out", o.out, "Output directory");
  cmd.add_option("--schedule", o.schedule, "Phase switch, switch@<round>:<method>");
  cmd.add_option("--stage1", o.stage1, "Candidate stage on or off")->capture_default_str();
  cmd.add_option("--resume", o.resume, "Continue from checkpoints in --out")->capture_default_str();
  cmd.add_option("--eval", o.eval_file, "File of pool indices used for evaluation");
  cmd.add_option("--sigma", o.sigma, "Fixed kernel bandwidth (default: median heuristic)");
  cmd.add_flag("--quiet", o.quiet, "No per-round progress");
  cmd.add_option("--config", "Flat key=value file mirroring the flags; flags override it");
}

/// Reads `key = value` lines ('#' comments) into --key=value tokens.
std::vector<std::string> config_tokens(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::vector<std::string> out;
  std::string line;
  for (int line_no = 1; std::getline(in, line); ++line_no) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto trim = [](std::string t) {
      const auto b = t.find_first_not_of(" \t\r"), e = t.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : t.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key=value");
    }
    const auto key = trim(line.substr(0, eq));
    if (key.empty() || key == "config") throw ConfigError(path + ":" + std::to_string(line_no) + ": invalid key");
    out.push_back("--" + key + "=" + trim(line.substr(eq + 1)));
  }
  return out;
}

/// Splices the --config file (if any) in front of the flags given after the
/// subcommand, so that later flags win.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  if (args.size() < 2 || (args[1] != "run" && args[1] != "sweep")) return args;
  std::vector<std::string> rest, file;
  for (std::size_t i = 2; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      file = config_tokens(args[++i]);
    } else if (args[i].starts_with("--config=")) {
      file = config_tokens(args[i].substr(9));
    } else {
      rest.push_back(args[i]);
    }
  }
  std::vector<std::string> out{args[0], args[1]};
  out.insert(out.end(), file.begin(), file.end());
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string tok; std::getline(ss, tok, sep);)
    if (!tok.empty()) out.push_back(tok);
  return out;
}

template <class T>
T number(const std::string& text, const std::string& what) {
  T v{};
  std::istringstream is(text);
  if (!(is >> v) || !is.eof()) throw ConfigError("invalid " + what + " '" + text + "'");
  return v;
}

SyntheticTaskSpec parse_synthetic(const std::string& text, std::uint64_t& seed) {
  SyntheticTaskSpec spec;
  for (const auto& item : split(text, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("synthetic spec entry '" + item + "' is not key=value");
    const std::string key = item.substr(0, eq), val = item.substr(eq + 1);
    if (key == "geometry") {
      if (val == "voronoi") spec.label_geometry = LabelGeometry::kVoronoi;
      else if (val == "stripes") spec.label_geometry = LabelGeometry::kStripes;
      else if (val == "blobs") spec.label_geometry = LabelGeometry::kBlobs;
      else throw ConfigError("unknown geometry '" + val + "'");
    } else if (key == "images") spec.n_images = number<Index>(val, key);
    else if (key == "side") spec.image_side = number<Index>(val, key);
    else if (key == "classes") spec.n_classes = number<Index>(val, key);
    else if (key == "dim") spec.feature_dim = number<Index>(val, key);
    else if (key == "spread") spec.cluster_spread = number<double>(val, key);
    else if (key == "seed") seed = number<std::uint64_t>(val, key);
    else throw ConfigError("unknown synthetic key '" + key + "'");
  }
  return spec;
}

FeaturePool load_pool(const RunOptions& o) {
  if (!o.pool_file.empty()) return import_features(o.pool_file);
  std::uint64_t seed = 0;
  return generate_synthetic(parse_synthetic(o.synthetic, seed), seed);
}

StochasticFeatureProvider make_provider(const RunOptions& o, const FeaturePool& pool) {
  if (!o.samples_file.empty()) {
    return StochasticFeatureProvider::replay(
        std::make_shared<const ReplaySamples>(import_samples(o.samples_file, pool.dim())));
  }
  if (!o.noise) return StochasticFeatureProvider::gaussian_default(pool);
  if (*o.noise == 0.0) return StochasticFeatureProvider::deterministic();
  return StochasticFeatureProvider::gaussian(*o.noise);
}

RoundConfig make_config(const RunOptions& o, const FeaturePool& pool) {
  RoundConfig c;
  c.rounds = o.rounds;
  c.budget = o.budget;
  c.budget_fraction = o.budget_frac;
  c.candidates.per_image = o.k;
  c.candidates.global_fraction = o.global_frac;
  if (o.sigma) c.candidates.kernel = KernelConfig::fixed(*o.sigma);
  c.acquisition.method = parse_method(o.method);
  c.acquisition.mc_samples = o.mc_samples;
  c.acquisition.power_beta = o.beta;
  c.stage1_enabled = o.stage1;
  if (!o.schedule.empty()) {
    // switch@<round>:<method>
    const auto at = o.schedule.find('@'), colon = o.schedule.find(':');
    if (o.schedule.rfind("switch@", 0) != 0 || colon == std::string::npos || colon < at) {
      throw ConfigError("schedule must look like switch@<round>:<method>");
    }
    c.schedule = PhaseSwitch{number<Index>(o.schedule.substr(at + 1, colon - at - 1), "schedule round"),
                             parse_method(o.schedule.substr(colon + 1))};
  }
  if (!o.eval_file.empty()) {
    std::ifstream in(o.eval_file);
    if (!in) throw FormatError("cannot open evaluation index file '" + o.eval_file + "'");
    std::string tok;
    while (in >> tok) {
      Index i = 0;
      try {
        i = number<Index>(tok, "index");
      } catch (const ConfigError&) {
        throw FormatError("evaluation file: bad index '" + tok + "'");
      }
      if (i < 0 || i >= pool.size()) throw FormatError("evaluation index " + tok + " is outside the pool");
      c.eval_indices.push_back(i);
    }
  }
  c.validate();
  return c;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (const auto& tok : split(s, ',')) out.push_back(number<std::uint64_t>(tok, "seed"));
  if (out.empty()) throw ConfigError("at least one seed is required");
  return out;
}

ExperimentResult execute(const RunOptions& o, const FeaturePool& pool, const StochasticFeatureProvider& provider,
                         const RoundConfig& cfg, const std::string& out_dir) {
  ExperimentOutput out;
  if (!out_dir.empty()) out.directory = fs::path(out_dir);
  out.resume = o.resume;
  if (!o.quiet) {
    out.on_round = [](std::uint64_t seed, const RoundState& s) {
      const auto& m = s.history.back();
      std::fprintf(stderr, "seed %llu round %lld: labeled %lld  acc %.4f  mIoU %.4f  (%.2f s)\n",
                   static_cast<unsigned long long>(seed), static_cast<long long>(m.round),
                   static_cast<long long>(m.labeled_count), m.pixel_accuracy, m.miou, m.wall_time);
    };
  }
  return run_experiment(pool, provider, cfg, parse_seeds(o.seeds), out);
}

void print_aggregate(const std::vector<AggregateRow>& rows) {
  std::printf("round,labeled_count,pixel_accuracy_mean,pixel_accuracy_std,miou_mean,miou_std\n");
  for (const auto& r : rows) {
    std::printf("%lld,%g,%.6f,%.6f,%.6f,%.6f\n", static_cast<long long>(r.round), r.labeled_count, r.accuracy_mean,
                r.accuracy_std, r.miou_mean, r.miou_std);
  }
}

int cmd_run(const RunOptions& o) {
  const auto pool = load_pool(o);
  const auto cfg = make_config(o, pool);
  const auto provider = make_provider(o, pool);
  const auto res = execute(o, pool, provider, cfg, o.out);
  if (!o.quiet) print_aggregate(res.aggregate);
  return 0;
}

int cmd_sweep(const RunOptions& o) {
  const auto pool = load_pool(o);
  const auto provider = make_provider(o, pool);
  std::ostringstream summary;
  summary << "K,global_fraction,final_pixel_accuracy_mean,final_pixel_accuracy_std,final_miou_mean,final_miou_std\n";
  for (const auto& cell : sensitivity_grid()) {
    RunOptions cell_opts = o;
    cell_opts.k = cell.per_image;
    cell_opts.global_frac = cell.global_fraction;
    const auto cfg = make_config(cell_opts, pool);
    std::string dir;
    if (!o.out.empty()) {
      std::ostringstream name;
      name << "K" << cell.per_image << "_gf" << cell.global_fraction;
      dir = (fs::path(o.out) / name.str()).string();
    }
    const auto res = execute(cell_opts, pool, provider, cfg, dir);
    const auto& last = res.aggregate.back();
    char line[256];
    std::snprintf(line, sizeof line, "%lld,%g,%.6f,%.6f,%.6f,%.6f\n", static_cast<long long>(cell.per_image),
                  cell.global_fraction, last.accuracy_mean, last.accuracy_std, last.miou_mean, last.miou_std);
    summary << line;
  }
  std::cout << summary.str();
  if (!o.out.empty()) {
    std::ofstream(fs::path(o.out) / "sweep.csv", std::ios::binary) << summary.str();
  }
  return 0;
}

int cmd_export(const std::string& in, const std::string& out, const std::string& plot) {
  const auto rows = aggregate_rows(read_metrics_csv(in));
  if (rows.empty()) throw FormatError("metrics CSV '" + in + "' has no rows");
  if (out.empty()) print_aggregate(rows);
  else write_aggregate_csv(rows, out);
  if (!plot.empty()) write_curve_svg(rows, plot);
  return 0;
}

FeatureMatrix random_points(Index n, Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  FeatureMatrix x(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) x(i, j) = normal(rng);
  return x;
}

int cmd_oracle_check(int trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::map<std::string, std::pair<long, long>> tally;  // name -> (passed, total)
  auto record = [&](const std::string& name, bool ok) {
    auto& t = tally[name];
    t.first += ok;
    ++t.second;
  };
  for (int t = 0; t < trials; ++t) {
    const Index n = 2 + static_cast<Index>(rng() % 11), d = 1 + static_cast<Index>(rng() % 4);
    const auto x = random_points(n, d, rng);
    std::vector<Index> ref(static_cast<std::size_t>(n));
    std::iota(ref.begin(), ref.end(), Index{0});
    const double sigma = 0.3 + 0.1 * static_cast<double>(rng() % 20);
    std::vector<Index> cond;
    if (t % 2) cond.push_back(static_cast<Index>(rng() % static_cast<std::uint64_t>(n)));
    const Index budget = n - static_cast<Index>(cond.size());
    record("maxherding vs exhaustive greedy",
           maxherding_select(x, ref, cond, budget, sigma).selected == oracle::herding(x, ref, cond, budget, sigma));
    record("k-center vs brute force", kcenter_greedy(x, ref, cond, budget) == oracle::kcenter(x, ref, cond, budget));
    {
      std::vector<Index> pick(ref.begin(), ref.begin() + 1 + static_cast<std::ptrdiff_t>(rng() % static_cast<std::uint64_t>(n)));
      CoverageState<> s(x, ref, sigma);
      for (Index p : pick) s.add(p);
      record("coverage value", std::abs(s.value() - oracle::coverage(x, ref, pick, sigma)) < 1e-12);
    }
    {
      const Index m = 2 + static_cast<Index>(rng() % 7), c = 2 + static_cast<Index>(rng() % 9);
      std::gamma_distribution<double> g(t % 3 ? 1.0 : 0.2, 1.0);
      Probabilities p(m, c);
      for (Index i = 0; i < m; ++i) {
        for (Index k = 0; k < c; ++k) p(i, k) = g(rng) + 1e-300;
        p.row(i) /= p.row(i).sum();
      }
      std::vector<std::vector<double>> nested(static_cast<std::size_t>(m));
      for (Index i = 0; i < m; ++i) nested[static_cast<std::size_t>(i)].assign(p.row(i).data(), p.row(i).data() + c);
      record("mutual information", std::abs(mutual_information_raw(p) - oracle::mutual_information(nested)) < 1e-12);
    }
    {
      const int c = 2 + static_cast<int>(rng() % 7);
      const std::size_t len = 1 + rng() % 200;
      std::vector<int> gt(len), pred(len);
      for (std::size_t i = 0; i < len; ++i) {
        gt[i] = static_cast<int>(rng() % static_cast<std::uint64_t>(c));
        pred[i] = rng() % 3 ? gt[i] : static_cast<int>(rng() % static_cast<std::uint64_t>(c));
      }
      record("mIoU vs confusion matrix", miou(pred, gt, c).mean == oracle::confusion_miou(pred, gt, c).mean);
    }
    {
      std::vector<double> scores(1 + rng() % 40);
      for (auto& v : scores) v = static_cast<double>(rng() % 10);
      const auto b = static_cast<Index>(rng() % (scores.size() + 1));
      const auto got = top_b(scores, b);
      record("top-b selection", std::vector<std::int64_t>(got.begin(), got.end()) == oracle::top_b(scores, b));
    }
  }
  bool all = true;
  for (const auto& [name, t] : tally) {
    const bool ok = t.first == t.second;
    all = all && ok;
    std::printf("%-34s %ld/%ld %s\n", name.c_str(), t.first, t.second, ok ? "ok" : "MISMATCH");
  }
  return all ? 0 : static_cast<int>(ExitCode::kFailure);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage low-budget pixel active learning"};
  app.require_subcommand(1);

  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  RunOptions run_opts;
  auto* run = app.add_subcommand("run", "Run an active-learning experiment");
  add_run_options(*run, run_opts);

  RunOptions sweep_opts;
  auto* sweep = app.add_subcommand("sweep", "Run every cell of the K x global-fraction grid");
  add_run_options(*sweep, sweep_opts);

  std::string export_in, export_out, export_plot;
  auto* exp = app.add_subcommand("export-curve", "Aggregate a metrics CSV per round");
  exp->add_option("input", export_in, "metrics.csv from a run")->required();
  exp->add_option("--out", export_out, "Aggregate CSV path (default: stdout)");
  exp->add_option("--plot", export_plot, "SVG plot path");

  int oracle_trials = 300;
  std::uint64_t oracle_seed = 1;
  auto* orc = app.add_subcommand("oracle-check", "Compare library routines against brute-force references");
  orc->add_option("--trials", oracle_trials, "Random cases per check")->capture_default_str()->check(CLI::PositiveNumber);
  orc->add_option("--seed", oracle_seed, "Seed of the random cases")->capture_default_str();

  try {
    std::vector<std::string> args;
    try {
      args = expand_config(argc, argv);
    } catch (const ConfigError& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
      return static_cast<int>(ExitCode::kConfiguration);
    }
    std::vector<char*> ptrs;
    for (auto& a : args) ptrs.push_back(a.data());
    app.parse(static_cast<int>(ptrs.size()), ptrs.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ExitCode::kConfiguration);
  }

  try {
    if (*run) {
      if (run_opts.pool_file.empty() && run_opts.synthetic.empty()) throw ConfigError("one of --pool or --synthetic is required");
      return cmd_run(run_opts);
    }
    if (*sweep) {
      if (sweep_opts.pool_file.empty() && sweep_opts.synthetic.empty()) throw ConfigError("one of --pool or --synthetic is required");
      return cmd_sweep(sweep_opts);
    }
    if (*exp) return cmd_export(export_in, export_out, export_plot);
    if (*orc) return cmd_oracle_check(oracle_trials, oracle_seed);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return static_cast<int>(ExitCode::kFailure);
  }
  return 0;
}
