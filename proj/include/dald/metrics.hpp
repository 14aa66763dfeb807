#pragma once

#include <optional>
#include <span>
#include <vector>

#include "dald/error.hpp"
#include "dald/feature_pool.hpp"
#include "dald/head.hpp"

namespace dald {

struct MiouResult {
  double mean = 0.0;
  std::vector<std::optional<double>> per_class;  // empty when the class is absent from both sides
};

/// Per-class IoU = TP / (TP + FP + FN). Classes absent from both the
/// predictions and the ground truth are left out of the mean.
inline MiouResult miou(std::span<const int> predictions, std::span<const int> ground_truth, Index n_classes) {
  DALD_REQUIRE(predictions.size() == ground_truth.size(), "prediction and ground-truth lengths differ");
  DALD_REQUIRE(n_classes >= 1, "need at least one class");
  const auto c = static_cast<std::size_t>(n_classes);
  std::vector<Index> tp(c, 0), fp(c, 0), fn(c, 0);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const int p = predictions[i];
    const int g = ground_truth[i];
    DALD_REQUIRE(p >= 0 && p < n_classes && g >= 0 && g < n_classes, "class id out of range");
    if (p == g) {
      ++tp[static_cast<std::size_t>(p)];
    } else {
      ++fp[static_cast<std::size_t>(p)];
      ++fn[static_cast<std::size_t>(g)];
    }
  }
  MiouResult out;
  out.per_class.resize(c);
  double sum = 0.0;
  Index present = 0;
  for (std::size_t k = 0; k < c; ++k) {
    const Index denom = tp[k] + fp[k] + fn[k];
    if (denom == 0) continue;
    out.per_class[k] = static_cast<double>(tp[k]) / static_cast<double>(denom);
    sum += *out.per_class[k];
    ++present;
  }
  out.mean = present > 0 ? sum / static_cast<double>(present) : 0.0;
  return out;
}

struct Evaluation {
  double pixel_accuracy = 0.0;
  double miou = 0.0;
  std::vector<std::optional<double>> per_class_iou;
};

/// Argmax class of every listed pixel's base feature.
inline std::vector<int> predict(const HeadParams& head, const FeaturePool& pool, std::span<const Index> pixels) {
  constexpr Index kChunk = 4096;
  std::vector<int> out(pixels.size());
  for (std::size_t begin = 0; begin < pixels.size(); begin += kChunk) {
    const auto end = std::min(pixels.size(), begin + static_cast<std::size_t>(kChunk));
    FeatureMatrix x(static_cast<Index>(end - begin), pool.dim());
    for (std::size_t i = begin; i < end; ++i) x.row(static_cast<Index>(i - begin)) = pool.feature(pixels[i]);
    const auto probs = forward(head, x);
    for (Index r = 0; r < probs.rows(); ++r) {
      Index arg = 0;
      probs.row(r).maxCoeff(&arg);
      out[begin + static_cast<std::size_t>(r)] = static_cast<int>(arg);
    }
  }
  return out;
}

inline Evaluation evaluate(const HeadParams& head, const FeaturePool& pool, const AnnotationOracle& oracle,
                           std::span<const Index> eval_indices) {
  DALD_REQUIRE(!eval_indices.empty(), "evaluation set is empty");
  const auto pred = predict(head, pool, eval_indices);
  std::vector<int> truth(eval_indices.size());
  Index hits = 0;
  for (std::size_t i = 0; i < eval_indices.size(); ++i) {
    truth[i] = oracle.annotate(eval_indices[i]);
    if (truth[i] == pred[i]) ++hits;
  }
  auto m = miou(pred, truth, pool.num_classes());
  return {static_cast<double>(hits) / static_cast<double>(eval_indices.size()), m.mean, std::move(m.per_class)};
}

}  // namespace dald
