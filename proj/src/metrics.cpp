#include "ddtr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace ddtr {

namespace {

std::size_t total_lesions(const EvalSet& evals) {
  std::size_t n = 0;
  for (const auto& im : evals) n += im.lesions.size();
  return n;
}

struct RankedDetection {
  double score;
  std::size_t image;
  std::size_t index;
};

std::vector<RankedDetection> rank_detections(const EvalSet& evals) {
  std::vector<RankedDetection> ranked;
  for (std::size_t i = 0; i < evals.size(); ++i) {
    for (std::size_t j = 0; j < evals[i].detections.size(); ++j) {
      const double s = evals[i].detections[j].score;
      if (!std::isfinite(s)) throw std::invalid_argument("detection scores must be finite");
      ranked.push_back({s, i, j});
    }
  }
  std::sort(ranked.begin(), ranked.end(), [](const RankedDetection& a, const RankedDetection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.image != b.image) return a.image < b.image;
    return a.index < b.index;
  });
  return ranked;
}

MetricValue coverage(const EvalSet& evals, std::size_t per_image_limit) {
  const std::size_t total = total_lesions(evals);
  if (total == 0) return std::nullopt;
  std::size_t covered = 0;
  for (const auto& im : evals) {
    std::vector<std::size_t> order(im.detections.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return im.detections[a].score > im.detections[b].score;
    });
    order.resize(std::min(order.size(), per_image_limit));
    for (const auto& lesion : im.lesions) {
      double best = 0.0;
      for (auto j : order) best = std::max(best, iou(im.detections[j].box, lesion));
      if (best >= kHitIou) ++covered;
    }
  }
  return static_cast<double>(covered) / static_cast<double>(total);
}

}  // namespace

MetricValue ap_at(const EvalSet& evals, double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0)) throw std::invalid_argument("ap_at: threshold must lie in (0, 1)");
  const std::size_t total = total_lesions(evals);
  if (total == 0) return std::nullopt;

  const auto ranked = rank_detections(evals);
  std::vector<std::vector<bool>> claimed(evals.size());
  for (std::size_t i = 0; i < evals.size(); ++i) claimed[i].assign(evals[i].lesions.size(), false);

  std::vector<double> recall, precision;
  std::size_t tp = 0, fp = 0;
  for (const auto& r : ranked) {
    const auto& im = evals[r.image];
    const Boxd& box = im.detections[r.index].box;
    double best = -1.0;
    std::size_t best_lesion = 0;
    for (std::size_t l = 0; l < im.lesions.size(); ++l) {
      const double o = iou(box, im.lesions[l]);
      if (o > best) {
        best = o;
        best_lesion = l;
      }
    }
    if (best >= iou_threshold && !claimed[r.image][best_lesion]) {
      claimed[r.image][best_lesion] = true;
      ++tp;
    } else {
      ++fp;
    }
    recall.push_back(static_cast<double>(tp) / static_cast<double>(total));
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
  }

  // precision envelope over the recall axis, integrated where recall changes
  std::vector<double> mrec{0.0}, mpre{0.0};
  mrec.insert(mrec.end(), recall.begin(), recall.end());
  mpre.insert(mpre.end(), precision.begin(), precision.end());
  mrec.push_back(1.0);
  mpre.push_back(0.0);
  for (std::size_t i = mpre.size() - 1; i-- > 0;) mpre[i] = std::max(mpre[i], mpre[i + 1]);
  double ap = 0.0;
  for (std::size_t i = 0; i + 1 < mrec.size(); ++i) {
    if (mrec[i + 1] != mrec[i]) ap += (mrec[i + 1] - mrec[i]) * mpre[i + 1];
  }
  return ap;
}

MetricValue ap_range(const EvalSet& evals) {
  if (total_lesions(evals) == 0) return std::nullopt;
  double sum = 0.0;
  for (int k = 2; k <= 10; ++k) sum += *ap_at(evals, static_cast<double>(k) / 20.0);
  return sum / 9.0;
}

MetricValue fauc(const EvalSet& evals, double fpi_cap) {
  if (!(fpi_cap > 0.0)) throw std::invalid_argument("fauc: FPI cap must be positive");
  const std::size_t total = total_lesions(evals);
  if (total == 0) return std::nullopt;
  const double images = static_cast<double>(evals.size());

  const auto ranked = rank_detections(evals);
  std::vector<std::vector<bool>> covered(evals.size());
  for (std::size_t i = 0; i < evals.size(); ++i) covered[i].assign(evals[i].lesions.size(), false);

  // operating points after admitting each distinct score, starting from τ = +∞
  std::vector<std::size_t> fp_counts{0}, hit_counts{0};
  std::size_t fp = 0, hits = 0;
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    const auto& r = ranked[k];
    const auto& im = evals[r.image];
    const Boxd& box = im.detections[r.index].box;
    bool any = false;
    for (std::size_t l = 0; l < im.lesions.size(); ++l) {
      if (iou(box, im.lesions[l]) >= kHitIou) {
        any = true;
        if (!covered[r.image][l]) {
          covered[r.image][l] = true;
          ++hits;
        }
      }
    }
    if (!any) ++fp;
    const bool group_ends = k + 1 == ranked.size() || ranked[k + 1].score != r.score;
    if (group_ends) {
      fp_counts.push_back(fp);
      hit_counts.push_back(hits);
    }
  }

  double area = 0.0;
  for (std::size_t j = 0; j < fp_counts.size(); ++j) {
    const double u = static_cast<double>(fp_counts[j]) / images;
    if (u >= fpi_cap) break;
    double next = fpi_cap;
    if (j + 1 < fp_counts.size()) {
      const double un = static_cast<double>(fp_counts[j + 1]) / images;
      if (un == u) continue;
      next = std::min(un, fpi_cap);
    }
    area += (next - u) * (static_cast<double>(hit_counts[j]) / static_cast<double>(total));
  }
  return area / fpi_cap;
}

MetricValue localization(const EvalSet& evals) { return coverage(evals, SIZE_MAX); }

MetricValue localization_top10(const EvalSet& evals) { return coverage(evals, 10); }

const std::vector<std::string>& MetricValues::names() {
  static const std::vector<std::string> n{"fauc_1_10", "ap_10", "ap_10_50", "loc_L", "loc_L_top10"};
  return n;
}

std::vector<MetricValue> MetricValues::as_list() const { return {fauc, ap10, ap10_50, loc, loc_top10}; }

MetricValues evaluate_metrics(const EvalSet& evals) {
  return MetricValues{fauc(evals), ap_at(evals, kHitIou), ap_range(evals), localization(evals),
                      localization_top10(evals)};
}

MetricReport aggregate(std::span<const MetricValues> seeds) {
  if (seeds.empty()) throw std::invalid_argument("aggregate: no per-seed reports");
  MetricReport report;
  report.per_seed.assign(seeds.begin(), seeds.end());
  auto summarize = [&](MetricValue MetricValues::*field, MetricValue& mean_out, MetricValue& sd_out) {
    std::vector<double> v;
    for (const auto& s : seeds) {
      if (!(s.*field)) {
        mean_out.reset();
        sd_out.reset();
        return;
      }
      v.push_back(*(s.*field));
    }
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    mean_out = mean;
    sd_out = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  };
  summarize(&MetricValues::fauc, report.mean.fauc, report.sd.fauc);
  summarize(&MetricValues::ap10, report.mean.ap10, report.sd.ap10);
  summarize(&MetricValues::ap10_50, report.mean.ap10_50, report.sd.ap10_50);
  summarize(&MetricValues::loc, report.mean.loc, report.sd.loc);
  summarize(&MetricValues::loc_top10, report.mean.loc_top10, report.sd.loc_top10);
  return report;
}

}  // namespace ddtr
