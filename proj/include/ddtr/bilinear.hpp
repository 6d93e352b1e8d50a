#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>

namespace ddtr {

/// Four-tap bilinear stencil at a normalized location on an H×W grid.
///
/// Pixel (i, j) has its center at ((j + 0.5)/W, (i + 0.5)/H). Locations
/// outside the grid clamp to the border, where the location gradient is 0.
struct BilinearStencil {
  std::array<std::size_t, 4> index{};  // flat row-major cell indices
  std::array<double, 4> weight{};
  std::array<double, 4> dweight_dx{};  // w.r.t. the normalized x coordinate
  std::array<double, 4> dweight_dy{};

  static BilinearStencil at(std::size_t height, std::size_t width, double x, double y) {
    BilinearStencil s;
    const double max_x = static_cast<double>(width - 1);
    const double max_y = static_cast<double>(height - 1);
    double px = x * static_cast<double>(width) - 0.5;
    double py = y * static_cast<double>(height) - 0.5;
    double gx = static_cast<double>(width);
    double gy = static_cast<double>(height);
    if (!(px >= 0.0)) {
      px = 0.0;
      gx = 0.0;
    } else if (px > max_x) {
      px = max_x;
      gx = 0.0;
    }
    if (!(py >= 0.0)) {
      py = 0.0;
      gy = 0.0;
    } else if (py > max_y) {
      py = max_y;
      gy = 0.0;
    }
    const auto x0 = static_cast<std::size_t>(std::floor(px));
    const auto y0 = static_cast<std::size_t>(std::floor(py));
    const std::size_t x1 = std::min(x0 + 1, width - 1);
    const std::size_t y1 = std::min(y0 + 1, height - 1);
    const double fx = px - static_cast<double>(x0);
    const double fy = py - static_cast<double>(y0);

    s.index = {y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1};
    s.weight = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
    s.dweight_dx = {-(1 - fy) * gx, (1 - fy) * gx, -fy * gx, fy * gx};
    s.dweight_dy = {-(1 - fx) * gy, -fx * gy, (1 - fx) * gy, fx * gy};
    return s;
  }
};

}  // namespace ddtr
