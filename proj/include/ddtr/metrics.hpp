#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ddtr/geometry.hpp"

namespace ddtr {

struct Detection {
  Boxd box;
  double score = 0.0;
};

/// Lesions and detections of one image, already restricted to one class.
struct ImageEval {
  std::vector<Boxd> lesions;
  std::vector<Detection> detections;
};

using EvalSet = std::vector<ImageEval>;

/// Metric value; empty when the set holds no ground-truth lesion.
using MetricValue = std::optional<double>;

inline constexpr double kHitIou = 0.1;

/// PASCAL-style integrated AP at one IoU threshold. Detections are ranked by
/// descending score, ties by (image, detection index); each lesion is claimed
/// at most once.
MetricValue ap_at(const EvalSet& evals, double iou_threshold);

/// Mean AP over IoU thresholds 0.10, 0.15, …, 0.50.
MetricValue ap_range(const EvalSet& evals);

/// Lesion TPR integrated over false positives per image in [0, fpi_cap],
/// divided by fpi_cap. A detection is a false positive when it overlaps no
/// lesion of its image at IoU ≥ 0.1.
MetricValue fauc(const EvalSet& evals, double fpi_cap = 1.0);

/// Fraction of lesions overlapped at IoU ≥ 0.1 by any detection.
MetricValue localization(const EvalSet& evals);

/// As localization(), restricted to each image's ten highest-scoring
/// detections (ties by ascending detection index).
MetricValue localization_top10(const EvalSet& evals);

struct MetricValues {
  MetricValue fauc;
  MetricValue ap10;
  MetricValue ap10_50;
  MetricValue loc;
  MetricValue loc_top10;

  static const std::vector<std::string>& names();
  std::vector<MetricValue> as_list() const;
};

MetricValues evaluate_metrics(const EvalSet& evals);

/// Per-seed values with per-metric mean and sample standard deviation.
struct MetricReport {
  std::vector<MetricValues> per_seed;
  MetricValues mean;
  MetricValues sd;
};

MetricReport aggregate(std::span<const MetricValues> seeds);

}  // namespace ddtr
