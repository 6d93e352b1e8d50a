#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "ddtr/geometry.hpp"
#include "ddtr/tensor.hpp"

namespace ddtr {

struct LossWeights {
  double cls = 2.0;
  double l1 = 5.0;
  double giou = 2.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;

  void validate() const;
};

/// Annotated object; class 0 is reserved for the empty label.
struct GroundTruth {
  int cls = 1;
  Boxd box;
};

/// Prediction-to-label bijection. label_of[i] is the label slot of prediction i;
/// slots at or beyond the number of ground truths are empty labels.
struct Assignment {
  std::vector<std::size_t> label_of;
  double cost = 0.0;
};

/// Minimum-cost bijection on a square matrix (O(N³) shortest augmenting paths).
Assignment hungarian_assign(const RowMatrix& cost);

/// Column of each row under a minimum-cost injection; requires rows ≤ cols.
std::vector<std::size_t> assign_rows(const RowMatrix& cost);

inline constexpr double kFocalEps = 1e-8;

/// −α(1−p)^γ log p for a positive target, −(1−α)p^γ log(1−p) otherwise.
template <typename Scalar>
Scalar focal_loss(Scalar p, bool positive, double alpha, double gamma) {
  using std::log;
  using std::pow;
  if (p < kFocalEps) p = Scalar(kFocalEps);
  else if (p > 1.0 - kFocalEps) p = Scalar(1.0 - kFocalEps);
  const Scalar one(1.0);
  if (positive) return Scalar(-alpha * pow(Scalar(one - p), gamma) * log(p));
  return Scalar(-(1.0 - alpha) * pow(p, gamma) * log(Scalar(one - p)));
}

template <typename Scalar>
Scalar focal_from_logit(const Scalar& logit, bool positive, double alpha, double gamma) {
  using std::exp;
  const Scalar p = Scalar(1.0) / (Scalar(1.0) + exp(Scalar(-logit)));
  return focal_loss<Scalar>(p, positive, alpha, gamma);
}

/// W_l1·|b − t|₁ + W_giou·(1 − GIoU(b, t)).
template <typename Scalar>
Scalar box_loss(const Box<Scalar>& pred, const Boxd& target, const LossWeights& w) {
  using std::abs;
  const Box<Scalar> t = target.cast<Scalar>();
  Scalar l1(0.0);
  for (int i = 0; i < 4; ++i) l1 += abs(Scalar(pred(i) - t(i)));
  return Scalar(w.l1 * l1 + w.giou * (Scalar(1.0) - giou<Scalar>(pred, t)));
}

/// Focal classification loss summed over classes; label 0 means "no object".
double classification_loss(std::span<const double> logits, int label, const LossWeights& w);

/// Pair cost: W_cls·L_cls + 1[label non-empty]·(W_l1·L_l1 + W_giou·(1 − GIoU)).
double match_cost(std::span<const double> logits, const Boxd& box, const GroundTruth* label, const LossWeights& w);

/// Cost of every prediction against every label slot, ground truths first and
/// empty labels padding the matrix to N×N.
RowMatrix cost_matrix(const Tensor& logits, const Tensor& boxes, std::span<const GroundTruth> gt,
                      const LossWeights& w);

/// Minimum-cost bijection against cost_matrix, solved as the G×N problem of
/// pair cost minus empty-label cost. Unmatched predictions take the empty slots
/// in ascending order.
Assignment match_predictions(const Tensor& logits, const Tensor& boxes, std::span<const GroundTruth> gt,
                             const LossWeights& w);

/// One decoder layer's outputs: logits [N×C] (sigmoid space) and boxes [N×4].
struct HeadOutput {
  Tensor logits;
  Tensor boxes;
};

struct SetLoss {
  Tensor total;                 // differentiable scalar
  double classification = 0.0;  // weighted focal part
  double localization = 0.0;    // weighted L1 + GIoU part
  std::vector<Assignment> assignments;
};

/// Hungarian-matched loss of one layer under a fixed assignment.
Tensor matched_loss(const HeadOutput& out, std::span<const GroundTruth> gt, const Assignment& assignment,
                    const LossWeights& w, double* classification = nullptr, double* localization = nullptr);

/// Sum over layers of the independently matched set loss.
SetLoss set_loss(std::span<const HeadOutput> layers, std::span<const GroundTruth> gt, const LossWeights& w);

}  // namespace ddtr
