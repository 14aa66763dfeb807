#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dald/error.hpp"
#include "dald/random.hpp"

namespace dald {

using Index = std::int64_t;
using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using FeatureVector = Eigen::VectorXd;

/// Label value for pixels without ground truth.
inline constexpr int kUnknownLabel = -1;

struct PixelRef {
  Index image_id = 0;
  Index row = 0;
  Index col = 0;

  friend auto operator<=>(const PixelRef&, const PixelRef&) = default;
};

/// Geometry shared by every image of a pool.
struct PoolShape {
  Index n_images = 0;
  Index height = 0;
  Index width = 0;
  Index n_classes = 0;

  friend bool operator==(const PoolShape&, const PoolShape&) = default;
};

class AnnotationOracle;
class FeaturePool;
inline void write_feature_file(const FeaturePool& pool, const std::string& path);

/// Candidate pixels, their base features and (hidden) ground truth.
///
/// Labels are not reachable from the public surface; acquisition code sees
/// features and geometry only. Annotation goes through AnnotationOracle.
class FeaturePool {
 public:
  FeaturePool() = default;

  FeaturePool(PoolShape shape, std::vector<PixelRef> pixels, FeatureMatrix features,
              std::vector<int> labels)
      : shape_(shape), pixels_(std::move(pixels)), features_(std::move(features)),
        labels_(std::move(labels)) {
    validate();
    image_pixels_.assign(static_cast<std::size_t>(shape_.n_images), {});
    for (std::size_t i = 0; i < pixels_.size(); ++i) {
      image_pixels_[static_cast<std::size_t>(pixels_[i].image_id)].push_back(static_cast<Index>(i));
    }
  }

  [[nodiscard]] Index size() const noexcept { return static_cast<Index>(pixels_.size()); }
  [[nodiscard]] Index dim() const noexcept { return features_.cols(); }
  [[nodiscard]] Index num_classes() const noexcept { return shape_.n_classes; }
  [[nodiscard]] Index num_images() const noexcept { return shape_.n_images; }
  [[nodiscard]] const PoolShape& shape() const noexcept { return shape_; }

  [[nodiscard]] const PixelRef& pixel(Index i) const { return pixels_.at(static_cast<std::size_t>(i)); }
  [[nodiscard]] std::span<const PixelRef> pixels() const noexcept { return pixels_; }
  [[nodiscard]] const FeatureMatrix& features() const noexcept { return features_; }
  [[nodiscard]] auto feature(Index i) const { return features_.row(i); }

  /// Pixel indices belonging to one image, in pool order.
  [[nodiscard]] std::span<const Index> image_pixels(Index image_id) const {
    return image_pixels_.at(static_cast<std::size_t>(image_id));
  }

  [[nodiscard]] bool has_label(Index i) const {
    return labels_.at(static_cast<std::size_t>(i)) != kUnknownLabel;
  }

  friend bool operator==(const FeaturePool& a, const FeaturePool& b) {
    return a.shape_ == b.shape_ && a.pixels_ == b.pixels_ && a.labels_ == b.labels_ &&
           a.features_.rows() == b.features_.rows() && a.features_.cols() == b.features_.cols() &&
           a.features_ == b.features_;
  }

 private:
  friend class AnnotationOracle;
  friend void write_feature_file(const FeaturePool& pool, const std::string& path);

  void validate() const {
    if (shape_.n_images <= 0 || shape_.height <= 0 || shape_.width <= 0) {
      throw FormatError("pool dimensions must be positive");
    }
    if (shape_.n_classes < 2) throw FormatError("pool needs at least 2 classes");
    if (features_.cols() <= 0) throw FormatError("feature dimension must be positive");
    if (features_.rows() != static_cast<Index>(pixels_.size())) {
      throw FormatError("feature rows (" + std::to_string(features_.rows()) +
                        ") do not match pixel count (" + std::to_string(pixels_.size()) + ")");
    }
    if (labels_.size() != pixels_.size()) throw FormatError("label count does not match pixel count");
    std::set<PixelRef> seen;
    for (std::size_t i = 0; i < pixels_.size(); ++i) {
      const auto& p = pixels_[i];
      if (p.image_id < 0 || p.image_id >= shape_.n_images || p.row < 0 || p.row >= shape_.height ||
          p.col < 0 || p.col >= shape_.width) {
        throw FormatError("pixel " + std::to_string(i) + " lies outside the declared image grid");
      }
      if (!seen.insert(p).second) {
        throw FormatError("duplicate pixel (" + std::to_string(p.image_id) + ", " + std::to_string(p.row) +
                          ", " + std::to_string(p.col) + ")");
      }
      const int y = labels_[i];
      if (y != kUnknownLabel && (y < 0 || y >= shape_.n_classes)) {
        throw FormatError("label " + std::to_string(y) + " out of range at pixel " + std::to_string(i));
      }
    }
    if (!features_.allFinite()) throw FormatError("non-finite feature value");
  }

  PoolShape shape_;
  std::vector<PixelRef> pixels_;
  FeatureMatrix features_;
  std::vector<int> labels_;
  std::vector<std::vector<Index>> image_pixels_;
};

/// The only path from a pool to its ground truth: annotation of selected
/// pixels, and the full label vector for evaluation.
class AnnotationOracle {
 public:
  explicit AnnotationOracle(const FeaturePool& pool) : pool_(&pool) {}

  [[nodiscard]] int annotate(Index i) const {
    const int y = pool_->labels_.at(static_cast<std::size_t>(i));
    if (y == kUnknownLabel) throw FormatError("pixel " + std::to_string(i) + " has no ground truth");
    return y;
  }

  [[nodiscard]] std::span<const int> ground_truth() const noexcept { return pool_->labels_; }

 private:
  const FeaturePool* pool_;
};

// ---------------------------------------------------------------------------
// Synthetic tasks

enum class LabelGeometry { kVoronoi, kStripes, kBlobs };

struct SyntheticTaskSpec {
  Index n_images = 4;
  Index image_side = 16;
  Index n_classes = 3;
  double cluster_spread = 1.0;
  Index feature_dim = 8;
  LabelGeometry label_geometry = LabelGeometry::kVoronoi;
};

namespace detail {

inline std::vector<int> voronoi_labels(Index side, Index n_classes, Index image_id, Engine& rng) {
  const Index n_sites = n_classes + 2;
  std::vector<Index> cells(static_cast<std::size_t>(side * side));
  for (Index i = 0; i < side * side; ++i) cells[static_cast<std::size_t>(i)] = i;
  std::shuffle(cells.begin(), cells.end(), rng);
  const auto used = std::min<Index>(n_sites, side * side);
  std::vector<int> out(static_cast<std::size_t>(side * side));
  for (Index r = 0; r < side; ++r) {
    for (Index c = 0; c < side; ++c) {
      Index best = 0;
      Index best_d = -1;
      for (Index s = 0; s < used; ++s) {
        const Index sr = cells[static_cast<std::size_t>(s)] / side;
        const Index sc = cells[static_cast<std::size_t>(s)] % side;
        const Index d = (sr - r) * (sr - r) + (sc - c) * (sc - c);
        if (best_d < 0 || d < best_d) {
          best_d = d;
          best = s;
        }
      }
      out[static_cast<std::size_t>(r * side + c)] = static_cast<int>((best + image_id) % n_classes);
    }
  }
  return out;
}

inline std::vector<int> stripe_labels(Index side, Index n_classes, Index image_id) {
  std::vector<int> out(static_cast<std::size_t>(side * side));
  for (Index r = 0; r < side; ++r) {
    for (Index c = 0; c < side; ++c) {
      const Index band = (c * n_classes) / side;
      out[static_cast<std::size_t>(r * side + c)] = static_cast<int>((band + image_id) % n_classes);
    }
  }
  return out;
}

inline std::vector<int> blob_labels(Index side, Index n_classes, Index image_id, Engine& rng) {
  std::vector<int> out(static_cast<std::size_t>(side * side), 0);
  std::uniform_int_distribution<Index> pos(0, side - 1);
  std::uniform_real_distribution<double> radius(0.1 * static_cast<double>(side), 0.3 * static_cast<double>(side));
  for (Index k = 1; k < n_classes; ++k) {
    const int cls = static_cast<int>((k + image_id) % n_classes);
    const Index cr = pos(rng);
    const Index cc = pos(rng);
    const double rad = radius(rng);
    for (Index r = 0; r < side; ++r) {
      for (Index c = 0; c < side; ++c) {
        const double d = std::hypot(static_cast<double>(r - cr), static_cast<double>(c - cc));
        if (d <= rad) out[static_cast<std::size_t>(r * side + c)] = cls;
      }
    }
    out[static_cast<std::size_t>(cr * side + cc)] = cls;
  }
  // Background takes whatever class image_id rotates onto slot 0.
  const int background = static_cast<int>(image_id % n_classes);
  if (background != 0) {
    for (auto& y : out) {
      if (y == 0) y = background;
      else if (y == background) y = 0;
    }
  }
  return out;
}

/// Class centers with pairwise distance at least 3 * spread.
inline std::vector<FeatureVector> class_centers(Index n_classes, Index dim, double spread, Engine& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double min_sep = 3.0 * spread;
  double scale = std::max(spread, 1e-3) * 2.0;
  std::vector<FeatureVector> centers;
  int attempts = 0;
  while (static_cast<Index>(centers.size()) < n_classes) {
    FeatureVector c(dim);
    for (Index j = 0; j < dim; ++j) c[j] = scale * normal(rng);
    bool ok = true;
    for (const auto& other : centers) {
      if ((other - c).norm() < min_sep) {
        ok = false;
        break;
      }
    }
    if (ok) {
      centers.push_back(std::move(c));
      attempts = 0;
    } else if (++attempts > 64) {
      scale *= 1.5;
      attempts = 0;
    }
  }
  return centers;
}

}  // namespace detail

/// Builds a desk-scale segmentation task: per-image label maps following the
/// requested geometry, features drawn around well-separated class centers.
inline FeaturePool generate_synthetic(const SyntheticTaskSpec& spec, std::uint64_t seed) {
  if (spec.n_images <= 0 || spec.image_side <= 0 || spec.feature_dim <= 0) {
    throw ConfigError("synthetic task dimensions must be positive");
  }
  if (spec.n_classes < 2) throw ConfigError("synthetic task needs at least 2 classes");
  if (!(spec.cluster_spread > 0.0) || !std::isfinite(spec.cluster_spread)) {
    throw ConfigError("cluster_spread must be positive");
  }
  if (spec.image_side * spec.image_side < spec.n_classes) {
    throw ConfigError("image too small to hold every class");
  }

  Engine rng = make_engine({stream::kSynthetic, seed});
  const auto centers = detail::class_centers(spec.n_classes, spec.feature_dim, spec.cluster_spread, rng);

  const Index per_image = spec.image_side * spec.image_side;
  const Index total = spec.n_images * per_image;
  std::vector<PixelRef> pixels;
  pixels.reserve(static_cast<std::size_t>(total));
  std::vector<int> labels;
  labels.reserve(static_cast<std::size_t>(total));
  FeatureMatrix features(total, spec.feature_dim);
  std::normal_distribution<double> noise(0.0, spec.cluster_spread);

  for (Index img = 0; img < spec.n_images; ++img) {
    std::vector<int> map;
    switch (spec.label_geometry) {
      case LabelGeometry::kVoronoi: map = detail::voronoi_labels(spec.image_side, spec.n_classes, img, rng); break;
      case LabelGeometry::kStripes: map = detail::stripe_labels(spec.image_side, spec.n_classes, img); break;
      case LabelGeometry::kBlobs: map = detail::blob_labels(spec.image_side, spec.n_classes, img, rng); break;
    }
    for (Index r = 0; r < spec.image_side; ++r) {
      for (Index c = 0; c < spec.image_side; ++c) {
        const auto row = static_cast<Index>(pixels.size());
        const int y = map[static_cast<std::size_t>(r * spec.image_side + c)];
        pixels.push_back({img, r, c});
        labels.push_back(y);
        for (Index j = 0; j < spec.feature_dim; ++j) {
          features(row, j) = centers[static_cast<std::size_t>(y)][j] + noise(rng);
        }
      }
    }
  }
  PoolShape shape{spec.n_images, spec.image_side, spec.image_side, spec.n_classes};
  return FeaturePool(shape, std::move(pixels), std::move(features), std::move(labels));
}

// ---------------------------------------------------------------------------
// Stochastic feature provider

/// Stored feature draws keyed by (pixel index, sample index).
class ReplaySamples {
 public:
  void add(Index pixel, Index sample, FeatureVector value) {
    if (!samples_.emplace(std::pair{pixel, sample}, std::move(value)).second) {
      throw FormatError("duplicate replay sample (" + std::to_string(pixel) + ", " + std::to_string(sample) + ")");
    }
  }
  [[nodiscard]] const FeatureVector* find(Index pixel, Index sample) const {
    auto it = samples_.find({pixel, sample});
    return it == samples_.end() ? nullptr : &it->second;
  }
  [[nodiscard]] std::size_t size() const noexcept { return samples_.size(); }

 private:
  std::map<std::pair<Index, Index>, FeatureVector> samples_;
};

/// Seeded source of feature draws per pixel, standing in for a noisy
/// multi-timestep feature extractor. Immutable after construction.
///
/// Seed policy: draw (pixel, sample index) under experiment seed s uses the
/// stream derived from (s, pixel, sample index), so results never depend on
/// evaluation order or batching.
class StochasticFeatureProvider {
 public:
  enum class Mode { kDeterministic, kGaussian, kReplay };

  static StochasticFeatureProvider deterministic() { return StochasticFeatureProvider(Mode::kDeterministic, 0.0, nullptr); }

  static StochasticFeatureProvider gaussian(double noise_scale) {
    if (!(noise_scale >= 0.0) || !std::isfinite(noise_scale)) throw ConfigError("noise scale must be >= 0");
    return StochasticFeatureProvider(Mode::kGaussian, noise_scale, nullptr);
  }

  /// Gaussian provider with the default scale: 0.1 x median base-feature norm.
  static StochasticFeatureProvider gaussian_default(const FeaturePool& pool) {
    std::vector<double> norms(static_cast<std::size_t>(pool.size()));
    for (Index i = 0; i < pool.size(); ++i) norms[static_cast<std::size_t>(i)] = pool.feature(i).norm();
    if (norms.empty()) return gaussian(0.0);
    auto mid = norms.begin() + static_cast<std::ptrdiff_t>(norms.size() / 2);
    std::nth_element(norms.begin(), mid, norms.end());
    return gaussian(0.1 * *mid);
  }

  static StochasticFeatureProvider replay(std::shared_ptr<const ReplaySamples> samples) {
    if (!samples) throw ConfigError("replay provider needs a sample store");
    return StochasticFeatureProvider(Mode::kReplay, 0.0, std::move(samples));
  }

  [[nodiscard]] Mode mode() const noexcept { return mode_; }
  [[nodiscard]] double noise_scale() const noexcept { return noise_scale_; }

  /// One draw. Sample index 0 is reserved for the independent extra draw used
  /// by entropy-augmented scores.
  [[nodiscard]] FeatureVector sample(const FeaturePool& pool, Index pixel, Index sample_index,
                                     std::uint64_t seed) const {
    DALD_REQUIRE(pixel >= 0 && pixel < pool.size(), "pixel index out of range");
    switch (mode_) {
      case Mode::kDeterministic: return pool.feature(pixel).transpose();
      case Mode::kGaussian: {
        FeatureVector out = pool.feature(pixel).transpose();
        if (noise_scale_ == 0.0) return out;
        Engine rng = make_engine({stream::kFeatureNoise, seed, static_cast<std::uint64_t>(pixel),
                                  static_cast<std::uint64_t>(sample_index)});
        std::normal_distribution<double> normal(0.0, noise_scale_);
        for (Index j = 0; j < out.size(); ++j) out[j] += normal(rng);
        return out;
      }
      case Mode::kReplay: {
        const FeatureVector* v = replay_->find(pixel, sample_index);
        if (v == nullptr) {
          throw InsufficientSamples("no stored sample " + std::to_string(sample_index) + " for pixel " +
                                    std::to_string(pixel));
        }
        if (v->size() != pool.dim()) throw FormatError("replay sample dimension mismatch");
        return *v;
      }
    }
    return {};
  }

  /// `count` draws with sample indices first_index, first_index+1, ... as rows.
  [[nodiscard]] FeatureMatrix sample_features(const FeaturePool& pool, Index pixel, Index count, std::uint64_t seed,
                                              Index first_index = 0) const {
    DALD_REQUIRE(count >= 1, "sample count must be >= 1");
    FeatureMatrix out(count, pool.dim());
    for (Index m = 0; m < count; ++m) out.row(m) = sample(pool, pixel, first_index + m, seed).transpose();
    return out;
  }

 private:
  StochasticFeatureProvider(Mode mode, double eta, std::shared_ptr<const ReplaySamples> replay)
      : mode_(mode), noise_scale_(eta), replay_(std::move(replay)) {}

  Mode mode_;
  double noise_scale_;
  std::shared_ptr<const ReplaySamples> replay_;
};

// ---------------------------------------------------------------------------
// Feature files
//
//   header:  N H W D C
//   record:  image_id row col label f_1 ... f_D       (label -1 = unknown)
//
// Replay sample file:  pixel_index sample_index f_1 ... f_D

namespace detail {

inline void append_double(std::string& out, double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

class TokenReader {
 public:
  explicit TokenReader(std::string_view line) : line_(line) {}

  bool next(std::string_view& tok) {
    while (pos_ < line_.size() && is_space(line_[pos_])) ++pos_;
    if (pos_ >= line_.size()) return false;
    const auto start = pos_;
    while (pos_ < line_.size() && !is_space(line_[pos_])) ++pos_;
    tok = line_.substr(start, pos_ - start);
    return true;
  }

  template <class T>
  bool parse(T& out) {
    std::string_view tok;
    if (!next(tok)) return false;
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), out);
    if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size()) {
      throw FormatError("malformed number '" + std::string(tok) + "'");
    }
    return true;
  }

  bool at_end() {
    std::string_view tok;
    return !next(tok);
  }

 private:
  static bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r'; }
  std::string_view line_;
  std::size_t pos_ = 0;
};

inline bool blank(std::string_view line) {
  return line.find_first_not_of(" \t\r") == std::string_view::npos;
}

}  // namespace detail

inline FeaturePool read_feature_file(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line) && detail::blank(line)) ++line_no;
  ++line_no;
  detail::TokenReader header(line);
  Index n = 0, h = 0, w = 0, d = 0, c = 0;
  if (!(header.parse(n) && header.parse(h) && header.parse(w) && header.parse(d) && header.parse(c)) ||
      !header.at_end()) {
    throw FormatError("feature file header must be 'N H W D C'");
  }
  if (n <= 0 || h <= 0 || w <= 0 || d <= 0 || c < 2) throw FormatError("feature file header has invalid dimensions");

  std::vector<PixelRef> pixels;
  std::vector<int> labels;
  std::vector<double> values;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::blank(line)) continue;
    detail::TokenReader rec(line);
    PixelRef p;
    int y = 0;
    if (!(rec.parse(p.image_id) && rec.parse(p.row) && rec.parse(p.col) && rec.parse(y))) {
      throw FormatError("line " + std::to_string(line_no) + ": truncated pixel record");
    }
    Index got = 0;
    double v = 0.0;
    while (rec.parse(v)) {
      values.push_back(v);
      ++got;
    }
    if (got != d) {
      throw FormatError("line " + std::to_string(line_no) + ": expected " + std::to_string(d) + " features, found " +
                        std::to_string(got));
    }
    pixels.push_back(p);
    labels.push_back(y);
  }
  const auto rows = static_cast<Index>(pixels.size());
  FeatureMatrix features = Eigen::Map<FeatureMatrix>(values.data(), rows, d);
  return FeaturePool(PoolShape{n, h, w, c}, std::move(pixels), std::move(features), std::move(labels));
}

inline FeaturePool import_features(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open feature file '" + path + "'");
  return read_feature_file(in);
}

inline void write_feature_file(const FeaturePool& pool, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write feature file '" + path + "'");
  const auto& s = pool.shape_;
  std::string buf = std::to_string(s.n_images) + ' ' + std::to_string(s.height) + ' ' + std::to_string(s.width) +
                    ' ' + std::to_string(pool.dim()) + ' ' + std::to_string(s.n_classes) + '\n';
  for (Index i = 0; i < pool.size(); ++i) {
    const auto& p = pool.pixels_[static_cast<std::size_t>(i)];
    buf += std::to_string(p.image_id) + ' ' + std::to_string(p.row) + ' ' + std::to_string(p.col) + ' ' +
           std::to_string(pool.labels_[static_cast<std::size_t>(i)]);
    for (Index j = 0; j < pool.dim(); ++j) {
      buf += ' ';
      detail::append_double(buf, pool.features_(i, j));
    }
    buf += '\n';
  }
  out << buf;
  if (!out) throw FormatError("failed writing feature file '" + path + "'");
}

inline ReplaySamples read_sample_file(std::istream& in, Index dim) {
  ReplaySamples out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::blank(line)) continue;
    detail::TokenReader rec(line);
    Index pixel = 0, sample = 0;
    if (!(rec.parse(pixel) && rec.parse(sample))) {
      throw FormatError("line " + std::to_string(line_no) + ": truncated sample record");
    }
    std::vector<double> vals;
    double v = 0.0;
    while (rec.parse(v)) vals.push_back(v);
    if (static_cast<Index>(vals.size()) != dim) {
      throw FormatError("line " + std::to_string(line_no) + ": expected " + std::to_string(dim) + " features, found " +
                        std::to_string(vals.size()));
    }
    out.add(pixel, sample, Eigen::Map<FeatureVector>(vals.data(), dim));
  }
  return out;
}

inline ReplaySamples import_samples(const std::string& path, Index dim) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open sample file '" + path + "'");
  return read_sample_file(in, dim);
}

}  // namespace dald
