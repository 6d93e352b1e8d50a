#pragma once

// Independent reference implementations used by unit tests and the acceptance
// binary. Each is written as a direct enumeration, not as a port of the
// production code path.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <vector>

#include "ddtr/geometry.hpp"
#include "ddtr/metrics.hpp"
#include "ddtr/random.hpp"
#include "ddtr/tensor.hpp"

namespace oracle {

using ddtr::Boxd;
using ddtr::EvalSet;
using ddtr::RowMatrix;

/// Minimum over all permutations of Σ_i cost(i, σ(i)), summed in row order.
inline double brute_assignment_cost(const RowMatrix& cost) {
  const auto n = static_cast<std::size_t>(cost.rows());
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < n; ++i) c += cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(perm[i]));
    best = std::min(best, c);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

struct Ranked {
  double score;
  std::size_t image;
  std::size_t index;
};

inline std::vector<Ranked> ranking(const EvalSet& evals) {
  std::vector<Ranked> r;
  for (std::size_t i = 0; i < evals.size(); ++i) {
    for (std::size_t j = 0; j < evals[i].detections.size(); ++j) r.push_back({evals[i].detections[j].score, i, j});
  }
  // selection by repeated maximum keeps the ordering rule explicit
  std::vector<Ranked> out;
  std::vector<bool> taken(r.size(), false);
  for (std::size_t k = 0; k < r.size(); ++k) {
    std::size_t pick = r.size();
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (taken[c]) continue;
      if (pick == r.size()) {
        pick = c;
        continue;
      }
      const Ranked& a = r[c];
      const Ranked& b = r[pick];
      const bool better = a.score > b.score || (a.score == b.score && (a.image < b.image ||
                                                                        (a.image == b.image && a.index < b.index)));
      if (better) pick = c;
    }
    taken[pick] = true;
    out.push_back(r[pick]);
  }
  return out;
}

inline std::size_t lesion_count(const EvalSet& evals) {
  std::size_t n = 0;
  for (const auto& im : evals) n += im.lesions.size();
  return n;
}

/// True positives among the first k ranked detections under greedy PASCAL
/// matching: each detection takes its highest-IoU lesion, which counts only if
/// above threshold and not already claimed.
inline std::size_t prefix_true_positives(const EvalSet& evals, const std::vector<Ranked>& ranked, std::size_t k,
                                         double threshold) {
  std::vector<std::vector<bool>> claimed(evals.size());
  for (std::size_t i = 0; i < evals.size(); ++i) claimed[i].assign(evals[i].lesions.size(), false);
  std::size_t tp = 0;
  for (std::size_t p = 0; p < k; ++p) {
    const auto& im = evals[ranked[p].image];
    const Boxd& b = im.detections[ranked[p].index].box;
    double best = -1.0;
    std::size_t arg = 0;
    for (std::size_t l = 0; l < im.lesions.size(); ++l) {
      const double o = ddtr::iou(b, im.lesions[l]);
      if (o > best) {
        best = o;
        arg = l;
      }
    }
    if (best >= threshold && !claimed[ranked[p].image][arg]) {
      claimed[ranked[p].image][arg] = true;
      ++tp;
    }
  }
  return tp;
}

/// Enumerates every cutoff k, then integrates the interpolated precision
/// max_{j ≥ k} P_j over each recall increment.
inline ddtr::MetricValue brute_ap(const EvalSet& evals, double threshold) {
  const std::size_t total = lesion_count(evals);
  if (total == 0) return std::nullopt;
  const auto ranked = ranking(evals);
  const std::size_t n = ranked.size();
  std::vector<double> recall(n + 1, 0.0), precision(n + 1, 0.0);
  for (std::size_t k = 1; k <= n; ++k) {
    const std::size_t tp = prefix_true_positives(evals, ranked, k, threshold);
    recall[k] = static_cast<double>(tp) / static_cast<double>(total);
    precision[k] = static_cast<double>(tp) / static_cast<double>(k);
  }
  double ap = 0.0;
  for (std::size_t k = 1; k <= n; ++k) {
    if (recall[k] == recall[k - 1]) continue;
    double interp = 0.0;
    for (std::size_t j = k; j <= n; ++j) interp = std::max(interp, precision[j]);
    ap += (recall[k] - recall[k - 1]) * interp;
  }
  return ap;
}

/// Sweeps every distinct score plus +∞, recounting FPs and hit lesions from
/// scratch at each threshold, then integrates the right-continuous step
/// TPR(u) = TPR of the largest retained set with FPI ≤ u.
inline ddtr::MetricValue brute_fauc(const EvalSet& evals, double cap = 1.0) {
  const std::size_t total = lesion_count(evals);
  if (total == 0) return std::nullopt;
  const double images = static_cast<double>(evals.size());
  std::vector<double> thresholds{std::numeric_limits<double>::infinity()};
  for (const auto& im : evals) {
    for (const auto& d : im.detections) thresholds.push_back(d.score);
  }
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  struct Point {
    std::size_t fp;
    std::size_t hits;
  };
  std::vector<Point> points;
  for (double t : thresholds) {
    Point p{0, 0};
    for (const auto& im : evals) {
      std::vector<bool> hit(im.lesions.size(), false);
      for (const auto& d : im.detections) {
        if (d.score < t) continue;
        bool any = false;
        for (std::size_t l = 0; l < im.lesions.size(); ++l) {
          if (ddtr::iou(d.box, im.lesions[l]) >= ddtr::kHitIou) {
            any = true;
            hit[l] = true;
          }
        }
        if (!any) ++p.fp;
      }
      p.hits += static_cast<std::size_t>(std::count(hit.begin(), hit.end(), true));
    }
    points.push_back(p);
  }

  std::vector<std::size_t> fp_levels;
  for (const auto& p : points) fp_levels.push_back(p.fp);
  std::sort(fp_levels.begin(), fp_levels.end());
  fp_levels.erase(std::unique(fp_levels.begin(), fp_levels.end()), fp_levels.end());

  double area = 0.0;
  for (std::size_t i = 0; i < fp_levels.size(); ++i) {
    const double u = static_cast<double>(fp_levels[i]) / images;
    if (u >= cap) break;
    const double next = i + 1 < fp_levels.size() ? std::min(static_cast<double>(fp_levels[i + 1]) / images, cap) : cap;
    std::size_t best_hits = 0;
    for (const auto& p : points) {
      if (p.fp <= fp_levels[i]) best_hits = std::max(best_hits, p.hits);
    }
    area += (next - u) * (static_cast<double>(best_hits) / static_cast<double>(total));
  }
  return area / cap;
}

/// Random box with corners inside the unit square.
inline Boxd random_box(ddtr::Rng& rng, double min_side = 0.05, double max_side = 0.5) {
  const double w = rng.uniform(min_side, max_side);
  const double h = rng.uniform(min_side, max_side);
  return Boxd(rng.uniform(w / 2, 1 - w / 2), rng.uniform(h / 2, 1 - h / 2), w, h);
}

/// Small random EvalSet. Detections jitter around lesions so hits, misses and
/// duplicates all occur; scores come from a coarse grid so ties occur.
inline EvalSet random_eval_set(ddtr::Rng& rng, std::size_t max_images = 4, std::size_t max_detections = 6,
                               std::size_t max_lesions = 3) {
  EvalSet evals(1 + rng.index(max_images));
  for (auto& im : evals) {
    const std::size_t nl = rng.index(max_lesions + 1);
    for (std::size_t l = 0; l < nl; ++l) im.lesions.push_back(random_box(rng, 0.1, 0.4));
    const std::size_t nd = rng.index(max_detections + 1);
    for (std::size_t d = 0; d < nd; ++d) {
      Boxd b;
      if (!im.lesions.empty() && rng.bernoulli(0.6)) {
        b = im.lesions[rng.index(im.lesions.size())];
        b(0) += rng.uniform(-0.15, 0.15);
        b(1) += rng.uniform(-0.15, 0.15);
        b(2) *= rng.uniform(0.5, 1.5);
        b(3) *= rng.uniform(0.5, 1.5);
      } else {
        b = random_box(rng, 0.05, 0.4);
      }
      const double score = rng.bernoulli(0.3) ? static_cast<double>(rng.index(5)) / 4.0 : rng.uniform();
      im.detections.push_back({b, score});
    }
  }
  if (lesion_count(evals) == 0) evals.front().lesions.push_back(random_box(rng, 0.1, 0.4));
  return evals;
}

/// Bilinear read at normalized (x, y) with pixel centers at (j+½)/W and the
/// coordinates clamped to the outermost centers. map is [H×W×d] row-major.
inline std::vector<double> bilinear(const std::vector<double>& map, std::size_t h, std::size_t w, std::size_t d,
                                    double x, double y) {
  const double px = std::clamp(x * static_cast<double>(w) - 0.5, 0.0, static_cast<double>(w - 1));
  const double py = std::clamp(y * static_cast<double>(h) - 0.5, 0.0, static_cast<double>(h - 1));
  std::vector<double> out(d, 0.0);
  for (std::size_t i = 0; i < h; ++i) {
    const double wy = std::max(0.0, 1.0 - std::abs(py - static_cast<double>(i)));
    if (wy == 0.0) continue;
    for (std::size_t j = 0; j < w; ++j) {
      const double wx = std::max(0.0, 1.0 - std::abs(px - static_cast<double>(j)));
      if (wx == 0.0) continue;
      for (std::size_t c = 0; c < d; ++c) out[c] += wy * wx * map[(i * w + j) * d + c];
    }
  }
  return out;
}

/// Σ_m softmax(Q W_mq (K W_mk)ᵀ / √(d/M)) V W_mv W_mo with explicit loops.
inline RowMatrix naive_attention(const RowMatrix& q, const RowMatrix& k, const RowMatrix& v, const RowMatrix& wq,
                                 const RowMatrix& wk, const RowMatrix& wv, const RowMatrix& wo, std::size_t heads) {
  const auto nq = q.rows(), nk = k.rows(), d = q.cols();
  const auto dh = d / static_cast<Eigen::Index>(heads);
  RowMatrix out = RowMatrix::Zero(nq, d);
  for (std::size_t m = 0; m < heads; ++m) {
    const auto c0 = static_cast<Eigen::Index>(m) * dh;
    for (Eigen::Index a = 0; a < nq; ++a) {
      std::vector<double> logits(static_cast<std::size_t>(nk));
      for (Eigen::Index b = 0; b < nk; ++b) {
        double s = 0.0;
        for (Eigen::Index c = 0; c < dh; ++c) {
          double qa = 0.0, kb = 0.0;
          for (Eigen::Index e = 0; e < d; ++e) {
            qa += q(a, e) * wq(e, c0 + c);
            kb += k(b, e) * wk(e, c0 + c);
          }
          s += qa * kb;
        }
        logits[static_cast<std::size_t>(b)] = s / std::sqrt(static_cast<double>(dh));
      }
      const double mx = *std::max_element(logits.begin(), logits.end());
      double z = 0.0;
      for (double& l : logits) z += (l = std::exp(l - mx));
      std::vector<double> head(static_cast<std::size_t>(dh), 0.0);
      for (Eigen::Index b = 0; b < nk; ++b) {
        for (Eigen::Index c = 0; c < dh; ++c) {
          double vb = 0.0;
          for (Eigen::Index e = 0; e < d; ++e) vb += v(b, e) * wv(e, c0 + c);
          head[static_cast<std::size_t>(c)] += logits[static_cast<std::size_t>(b)] / z * vb;
        }
      }
      for (Eigen::Index o = 0; o < d; ++o) {
        for (Eigen::Index c = 0; c < dh; ++c) out(a, o) += head[static_cast<std::size_t>(c)] * wo(c0 + c, o);
      }
    }
  }
  return out;
}

}  // namespace oracle
