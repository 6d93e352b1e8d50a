#include <cmath>
#include <limits>
#include <stdexcept>

#include "ddtr/set_loss.hpp"

namespace ddtr {

std::vector<std::size_t> assign_rows(const RowMatrix& cost) {
  const auto n = static_cast<std::size_t>(cost.rows());
  const auto m = static_cast<std::size_t>(cost.cols());
  if (n > m) throw ShapeError("assign_rows: more rows than columns");
  if (!cost.allFinite()) throw std::domain_error("hungarian_assign: cost matrix has non-finite entries");
  if (n == 0) return {};

  // Potentials u (rows), v (columns); match[j] is the row assigned to column j.
  // Index 0 is a virtual column used as the augmenting-path root.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> match(m + 1, 0), way(m + 1, 0);
  for (std::size_t row = 1; row <= n; ++row) {
    match[0] = row;
    std::size_t col0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<bool> used(m + 1, false);
    do {
      used[col0] = true;
      const std::size_t i0 = match[col0];
      double delta = inf;
      std::size_t col1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = col0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          col1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      col0 = col1;
    } while (match[col0] != 0);
    do {
      const std::size_t col1 = way[col0];
      match[col0] = match[col1];
      col0 = col1;
    } while (col0 != 0);
  }

  std::vector<std::size_t> col_of(n, 0);
  for (std::size_t j = 1; j <= m; ++j) {
    if (match[j] != 0) col_of[match[j] - 1] = j - 1;
  }
  return col_of;
}

Assignment hungarian_assign(const RowMatrix& cost) {
  if (cost.cols() != cost.rows()) throw ShapeError("hungarian_assign: cost matrix must be square");
  const auto n = static_cast<std::size_t>(cost.rows());
  Assignment result;
  result.label_of = assign_rows(cost);
  for (std::size_t i = 0; i < n; ++i) {
    result.cost += cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(result.label_of[i]));
  }
  return result;
}

}  // namespace ddtr
