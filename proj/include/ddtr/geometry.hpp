#pragma once

#include <algorithm>

#include <Eigen/Core>

namespace ddtr {

/// Axis-aligned box as (cx, cy, w, h), normalized to the image.
template <typename Scalar>
using Box = Eigen::Matrix<Scalar, 4, 1>;
using Boxd = Box<double>;

/// Corner form (x0, y0, x1, y1).
template <typename Scalar>
using Corners = Eigen::Matrix<Scalar, 4, 1>;

template <typename Scalar>
Corners<Scalar> to_corners(const Box<Scalar>& b) {
  const Scalar hw = b(2) / Scalar(2);
  const Scalar hh = b(3) / Scalar(2);
  return Corners<Scalar>(b(0) - hw, b(1) - hh, b(0) + hw, b(1) + hh);
}

inline Boxd box_from_corners(double x0, double y0, double x1, double y1) {
  return Boxd((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0);
}

template <typename Scalar>
Scalar box_area(const Box<Scalar>& b) {
  return b(2) * b(3);
}

template <typename Scalar>
struct OverlapTerms {
  Scalar intersection;
  Scalar union_area;
  Scalar hull_area;
};

template <typename Scalar>
OverlapTerms<Scalar> overlap_terms(const Box<Scalar>& a, const Box<Scalar>& b) {
  using std::max;
  using std::min;
  const Corners<Scalar> ca = to_corners(a);
  const Corners<Scalar> cb = to_corners(b);
  const Scalar zero(0);
  const Scalar iw = max(zero, Scalar(min(ca(2), cb(2)) - max(ca(0), cb(0))));
  const Scalar ih = max(zero, Scalar(min(ca(3), cb(3)) - max(ca(1), cb(1))));
  const Scalar inter = iw * ih;
  const Scalar uni = box_area(a) + box_area(b) - inter;
  const Scalar hw = max(ca(2), cb(2)) - min(ca(0), cb(0));
  const Scalar hh = max(ca(3), cb(3)) - min(ca(1), cb(1));
  return {inter, uni, Scalar(hw * hh)};
}

/// Intersection over union; 0 when the union has no area.
template <typename Scalar>
Scalar iou(const Box<Scalar>& a, const Box<Scalar>& b) {
  const auto t = overlap_terms(a, b);
  if (!(t.union_area > Scalar(0))) return Scalar(0);
  return t.intersection / t.union_area;
}

/// IoU − (hull − union)/hull. Zero-area boxes act as points (IoU term 0).
template <typename Scalar>
Scalar giou(const Box<Scalar>& a, const Box<Scalar>& b) {
  const auto t = overlap_terms(a, b);
  const Scalar overlap = t.union_area > Scalar(0) ? Scalar(t.intersection / t.union_area) : Scalar(0);
  if (!(t.hull_area > Scalar(0))) return overlap;
  return overlap - (t.hull_area - t.union_area) / t.hull_area;
}

}  // namespace ddtr
