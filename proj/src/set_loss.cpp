#include "ddtr/set_loss.hpp"

#include <stdexcept>
#include <string>

#include <unsupported/Eigen/AutoDiff>

#include "ddtr/ops.hpp"

namespace ddtr {

namespace {

using Dual1 = Eigen::AutoDiffScalar<Eigen::Matrix<double, 1, 1>>;
using Dual4 = Eigen::AutoDiffScalar<Eigen::Vector4d>;

Boxd box_row(const Tensor& boxes, std::size_t i) {
  const auto d = boxes.data();
  return Boxd(d[i * 4], d[i * 4 + 1], d[i * 4 + 2], d[i * 4 + 3]);
}

void check_heads(const HeadOutput& out) {
  if (out.logits.dim() != 2 || out.boxes.dim() != 2 || out.boxes.cols() != 4) {
    throw ShapeError("set loss: expected logits [N×C] and boxes [N×4]");
  }
  if (out.logits.rows() != out.boxes.rows()) throw ShapeError("set loss: logits and boxes disagree on N");
}

void check_labels(std::span<const GroundTruth> gt, std::size_t n, std::size_t classes) {
  if (gt.size() > n) {
    throw std::invalid_argument("set loss: " + std::to_string(gt.size()) + " ground-truth objects exceed " +
                                std::to_string(n) + " prediction slots");
  }
  for (const auto& g : gt) {
    if (g.cls < 1 || static_cast<std::size_t>(g.cls) > classes) {
      throw std::invalid_argument("set loss: ground-truth class " + std::to_string(g.cls) + " outside [1, " +
                                  std::to_string(classes) + "]");
    }
  }
}

}  // namespace

void LossWeights::validate() const {
  if (cls < 0 || l1 < 0 || giou < 0) throw std::invalid_argument("loss weights must be non-negative");
  if (!(cls > 0 || l1 > 0 || giou > 0)) throw std::invalid_argument("at least one loss weight must be positive");
  if (focal_alpha < 0 || focal_alpha > 1) throw std::invalid_argument("focal alpha must lie in [0, 1]");
  if (focal_gamma < 0) throw std::invalid_argument("focal gamma must be non-negative");
}

double classification_loss(std::span<const double> logits, int label, const LossWeights& w) {
  double total = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    total += focal_from_logit<double>(logits[k], static_cast<int>(k) + 1 == label, w.focal_alpha, w.focal_gamma);
  }
  return total;
}

double match_cost(std::span<const double> logits, const Boxd& box, const GroundTruth* label, const LossWeights& w) {
  const int cls = label ? label->cls : 0;
  double cost = w.cls * classification_loss(logits, cls, w);
  if (label) cost += box_loss<double>(box, label->box, w);
  return cost;
}

RowMatrix cost_matrix(const Tensor& logits, const Tensor& boxes, std::span<const GroundTruth> gt,
                      const LossWeights& w) {
  check_heads(HeadOutput{logits, boxes});
  const std::size_t n = logits.rows();
  const std::size_t c = logits.cols();
  check_labels(gt, n, c);
  RowMatrix cost(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  const auto ld = logits.data();
  for (std::size_t i = 0; i < n; ++i) {
    const std::span<const double> row(ld.data() + i * c, c);
    const Boxd b = box_row(boxes, i);
    for (std::size_t j = 0; j < gt.size(); ++j) {
      cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = match_cost(row, b, &gt[j], w);
    }
    if (gt.size() < n) {
      const double empty = match_cost(row, b, nullptr, w);
      for (std::size_t j = gt.size(); j < n; ++j) cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = empty;
    }
  }
  return cost;
}

Assignment match_predictions(const Tensor& logits, const Tensor& boxes, std::span<const GroundTruth> gt,
                             const LossWeights& w) {
  check_heads(HeadOutput{logits, boxes});
  const std::size_t n = logits.rows();
  const std::size_t c = logits.cols();
  check_labels(gt, n, c);
  const std::size_t g = gt.size();
  const auto ld = logits.data();
  std::vector<double> empty(n);
  RowMatrix pair(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(n));
  RowMatrix reduced(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const std::span<const double> row(ld.data() + i * c, c);
    const Boxd b = box_row(boxes, i);
    empty[i] = match_cost(row, b, nullptr, w);
    for (std::size_t j = 0; j < g; ++j) {
      const auto jj = static_cast<Eigen::Index>(j), ii = static_cast<Eigen::Index>(i);
      pair(jj, ii) = match_cost(row, b, &gt[j], w);
      reduced(jj, ii) = pair(jj, ii) - empty[i];
    }
  }
  const std::vector<std::size_t> pred_of = assign_rows(reduced);
  Assignment a;
  a.label_of.assign(n, n);
  for (std::size_t j = 0; j < g; ++j) a.label_of[pred_of[j]] = j;
  std::size_t next_empty = g;
  for (std::size_t i = 0; i < n; ++i) {
    if (a.label_of[i] == n) a.label_of[i] = next_empty++;
    const std::size_t j = a.label_of[i];
    a.cost += j < g ? pair(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) : empty[i];
  }
  return a;
}

Tensor matched_loss(const HeadOutput& out, std::span<const GroundTruth> gt, const Assignment& assignment,
                    const LossWeights& w, double* classification, double* localization) {
  check_heads(out);
  const std::size_t n = out.logits.rows();
  const std::size_t c = out.logits.cols();
  check_labels(gt, n, c);
  if (assignment.label_of.size() != n) throw ShapeError("set loss: assignment size differs from prediction count");

  // Forward value and local gradients are computed together; the tape entry
  // only rescales them by the upstream gradient.
  std::vector<double> glogits(n * c, 0.0);
  std::vector<double> gboxes(n * 4, 0.0);
  double cls_total = 0.0, loc_total = 0.0;
  const auto ld = out.logits.data();
  const auto bd = out.boxes.data();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t slot = assignment.label_of[i];
    const GroundTruth* label = slot < gt.size() ? &gt[slot] : nullptr;
    const int cls = label ? label->cls : 0;
    for (std::size_t k = 0; k < c; ++k) {
      Dual1 z(ld[i * c + k], 1, 0);
      const Dual1 f = focal_from_logit<Dual1>(z, static_cast<int>(k) + 1 == cls, w.focal_alpha, w.focal_gamma);
      cls_total += w.cls * f.value();
      glogits[i * c + k] = w.cls * f.derivatives()(0);
    }
    if (label) {
      Box<Dual4> b;
      for (int t = 0; t < 4; ++t) b(t) = Dual4(bd[i * 4 + t], 4, t);
      const Dual4 l = box_loss<Dual4>(b, label->box, w);
      loc_total += l.value();
      for (int t = 0; t < 4; ++t) gboxes[i * 4 + t] = l.derivatives()(t);
    }
  }
  if (classification) *classification = cls_total;
  if (localization) *localization = loc_total;

  Tensor loss = Tensor::scalar(cls_total + loc_total);
  if (needs_grad({&out.logits, &out.boxes})) {
    Tensor logits = out.logits, boxes = out.boxes;
    Tape::active()->record({logits, boxes}, {loss},
                           [logits, boxes, loss, glogits = std::move(glogits), gboxes = std::move(gboxes)]() mutable {
                             const double g = loss.grad()[0];
                             if (logits.requires_grad()) {
                               auto gl = logits.grad_buffer();
                               for (std::size_t i = 0; i < gl.size(); ++i) gl[i] += g * glogits[i];
                             }
                             if (boxes.requires_grad()) {
                               auto gb = boxes.grad_buffer();
                               for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g * gboxes[i];
                             }
                           });
  }
  return loss;
}

SetLoss set_loss(std::span<const HeadOutput> layers, std::span<const GroundTruth> gt, const LossWeights& w) {
  if (layers.empty()) throw std::invalid_argument("set_loss: no prediction layers");
  SetLoss result;
  std::vector<Tensor> parts;
  for (const auto& layer : layers) {
    const Assignment a = match_predictions(layer.logits, layer.boxes, gt, w);
    double cls = 0.0, loc = 0.0;
    parts.push_back(matched_loss(layer, gt, a, w, &cls, &loc));
    result.classification += cls;
    result.localization += loc;
    result.assignments.push_back(a);
  }
  Tensor total = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) total = add(total, parts[i]);
  result.total = total;
  return result;
}

}  // namespace ddtr
