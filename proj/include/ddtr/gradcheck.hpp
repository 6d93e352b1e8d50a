#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "ddtr/tensor.hpp"

namespace ddtr {

/// Element `index` of tensor `tensor` in a finite-difference probe.
struct Coordinate {
  std::size_t tensor = 0;
  std::size_t index = 0;
};

/// Max over probed coordinates of |analytic − central difference| / max(1, |analytic|).
///
/// `f` must build a scalar from the tensors in `wrt`; it is evaluated once on a
/// fresh tape for the analytic gradient and twice per coordinate without a tape.
/// An empty `coords` probes every element of every tensor.
double finite_diff_check(const std::function<Tensor()>& f, std::span<Tensor> wrt, double step,
                         std::span<const Coordinate> coords = {});

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double step);

}  // namespace ddtr
