#include "ddtr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "ddtr/bilinear.hpp"

namespace ddtr {

namespace {

void require_matrix(const Tensor& t, const char* op) {
  if (t.dim() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + to_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " + to_string(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

// Elementwise unary op with derivative expressed through input x and output y.
template <typename Forward, typename Derivative>
Tensor unary(const Tensor& x, Forward f, Derivative df) {
  Tensor y(x.shape());
  auto xd = x.data();
  auto yd = y.data();
  for (std::size_t i = 0; i < xd.size(); ++i) yd[i] = f(xd[i]);
  if (needs_grad({&x})) {
    Tape::active()->record({x}, {y}, [x, y, df]() mutable {
      auto g = y.grad();
      auto gx = x.grad_buffer();
      auto xd = x.data();
      auto yd = y.data();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xd[i], yd[i]);
    });
  }
  return y;
}

void accumulate(const Tensor& target, std::span<const double> g, double factor = 1.0) {
  auto t = target.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) t[i] += factor * g[i];
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner extents differ, " + to_string(a.shape()) + " · " + to_string(b.shape()));
  }
  Tensor c(Shape{a.rows(), b.cols()});
  c.matrix().noalias() = a.matrix() * b.matrix();
  if (needs_grad({&a, &b})) {
    Tape::active()->record({a, b}, {c}, [a, b, c]() mutable {
      const auto g = c.grad_matrix();
      if (a.requires_grad()) a.grad_matrix_buffer().noalias() += g * b.matrix().transpose();
      if (b.requires_grad()) b.grad_matrix_buffer().noalias() += a.matrix().transpose() * g;
    });
  }
  return c;
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  Tensor t(Shape{a.cols(), a.rows()});
  t.matrix() = a.matrix().transpose();
  if (needs_grad({&a})) {
    Tape::active()->record({a}, {t}, [a, t]() mutable { a.grad_matrix_buffer() += t.grad_matrix().transpose(); });
  }
  return t;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor c(a.shape());
  auto ad = a.data(), bd = b.data();
  auto cd = c.data();
  for (std::size_t i = 0; i < cd.size(); ++i) cd[i] = ad[i] + bd[i];
  if (needs_grad({&a, &b})) {
    Tape::active()->record({a, b}, {c}, [a, b, c]() mutable {
      if (a.requires_grad()) accumulate(a, c.grad());
      if (b.requires_grad()) accumulate(b, c.grad());
    });
  }
  return c;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor c(a.shape());
  auto ad = a.data(), bd = b.data();
  auto cd = c.data();
  for (std::size_t i = 0; i < cd.size(); ++i) cd[i] = ad[i] - bd[i];
  if (needs_grad({&a, &b})) {
    Tape::active()->record({a, b}, {c}, [a, b, c]() mutable {
      if (a.requires_grad()) accumulate(a, c.grad());
      if (b.requires_grad()) accumulate(b, c.grad(), -1.0);
    });
  }
  return c;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor c(a.shape());
  auto ad = a.data(), bd = b.data();
  auto cd = c.data();
  for (std::size_t i = 0; i < cd.size(); ++i) cd[i] = ad[i] * bd[i];
  if (needs_grad({&a, &b})) {
    Tape::active()->record({a, b}, {c}, [a, b, c]() mutable {
      auto g = c.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_buffer();
        auto bd = b.data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bd[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_buffer();
        auto ad = a.data();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ad[i];
      }
    });
  }
  return c;
}

Tensor scale(const Tensor& a, double factor) {
  return unary(a, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  require_matrix(a, "add_row");
  if (row.size() != a.cols()) {
    throw ShapeError("add_row: row of " + std::to_string(row.size()) + " values for " + to_string(a.shape()));
  }
  Tensor c(a.shape());
  const Eigen::Map<const Eigen::RowVectorXd> r(row.data().data(), static_cast<Eigen::Index>(row.size()));
  c.matrix() = a.matrix().rowwise() + r;
  if (needs_grad({&a, &row})) {
    Tape::active()->record({a, row}, {c}, [a, row, c]() mutable {
      if (a.requires_grad()) accumulate(a, c.grad());
      if (row.requires_grad()) {
        auto gr = row.grad_buffer();
        Eigen::Map<Eigen::RowVectorXd> gm(gr.data(), static_cast<Eigen::Index>(gr.size()));
        gm += c.grad_matrix().colwise().sum();
      }
    });
  }
  return c;
}

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, [](double, double y) { return y * (1.0 - y); });
}

Tensor inverse_sigmoid(const Tensor& p) {
  static constexpr double lo = kInverseSigmoidEps;
  static constexpr double hi = 1.0 - kInverseSigmoidEps;
  return unary(
      p,
      [](double v) {
        const double c = std::clamp(v, lo, hi);
        return std::log(c / (1.0 - c));
      },
      [](double v, double) { return (v < lo || v > hi) ? 0.0 : 1.0 / (v * (1.0 - v)); });
}

Tensor log(const Tensor& x) {
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "softmax");
  Tensor y(x.shape());
  auto xd = x.data();
  auto yd = y.data();
  for (double v : xd) {
    if (!std::isfinite(v)) throw std::domain_error("softmax: non-finite input");
  }
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t r = 0; r < s.inner; ++r) {
      const std::size_t base = o * s.extent * s.inner + r;
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < s.extent; ++i) m = std::max(m, xd[base + i * s.inner]);
      double z = 0.0;
      for (std::size_t i = 0; i < s.extent; ++i) {
        const double e = std::exp(xd[base + i * s.inner] - m);
        yd[base + i * s.inner] = e;
        z += e;
      }
      for (std::size_t i = 0; i < s.extent; ++i) yd[base + i * s.inner] /= z;
    }
  }
  if (needs_grad({&x})) {
    Tape::active()->record({x}, {y}, [x, y, s]() mutable {
      auto g = y.grad();
      auto yd = y.data();
      auto gx = x.grad_buffer();
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t r = 0; r < s.inner; ++r) {
          const std::size_t base = o * s.extent * s.inner + r;
          double dot = 0.0;
          for (std::size_t i = 0; i < s.extent; ++i) dot += g[base + i * s.inner] * yd[base + i * s.inner];
          for (std::size_t i = 0; i < s.extent; ++i) {
            const std::size_t k = base + i * s.inner;
            gx[k] += yd[k] * (g[k] - dot);
          }
        }
      }
    });
  }
  return y;
}

Tensor layer_norm(const Tensor& x, std::size_t axis, const Tensor& gain, const Tensor& bias) {
  const AxisSplit s = split_axis(x.shape(), axis, "layer_norm");
  if (gain.size() != s.extent || bias.size() != s.extent) {
    throw ShapeError("layer_norm: gain/bias must have " + std::to_string(s.extent) + " values");
  }
  Tensor y(x.shape());
  // normalized values and inverse std are kept for the adjoint
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(s.outer * s.inner);
  auto xd = x.data();
  auto yd = y.data();
  auto gd = gain.data();
  auto bd = bias.data();
  const double n = static_cast<double>(s.extent);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t r = 0; r < s.inner; ++r) {
      const std::size_t base = o * s.extent * s.inner + r;
      double mean = 0.0;
      for (std::size_t i = 0; i < s.extent; ++i) mean += xd[base + i * s.inner];
      mean /= n;
      double var = 0.0;
      for (std::size_t i = 0; i < s.extent; ++i) {
        const double c = xd[base + i * s.inner] - mean;
        var += c * c;
      }
      var /= n;
      const double is = 1.0 / std::sqrt(var + kLayerNormEps);
      inv_std[o * s.inner + r] = is;
      for (std::size_t i = 0; i < s.extent; ++i) {
        const std::size_t k = base + i * s.inner;
        xhat[k] = (xd[k] - mean) * is;
        yd[k] = xhat[k] * gd[i] + bd[i];
      }
    }
  }
  if (needs_grad({&x, &gain, &bias})) {
    Tape::active()->record({x, gain, bias}, {y},
                           [x, gain, bias, y, s, xhat = std::move(xhat), inv_std = std::move(inv_std)]() mutable {
                             auto g = y.grad();
                             auto gd = gain.data();
                             const double n = static_cast<double>(s.extent);
                             if (gain.requires_grad() || bias.requires_grad()) {
                               auto gg = gain.grad_buffer();
                               auto gb = bias.grad_buffer();
                               for (std::size_t o = 0; o < s.outer; ++o) {
                                 for (std::size_t r = 0; r < s.inner; ++r) {
                                   const std::size_t base = o * s.extent * s.inner + r;
                                   for (std::size_t i = 0; i < s.extent; ++i) {
                                     const std::size_t k = base + i * s.inner;
                                     gg[i] += g[k] * xhat[k];
                                     gb[i] += g[k];
                                   }
                                 }
                               }
                             }
                             if (!x.requires_grad()) return;
                             auto gx = x.grad_buffer();
                             for (std::size_t o = 0; o < s.outer; ++o) {
                               for (std::size_t r = 0; r < s.inner; ++r) {
                                 const std::size_t base = o * s.extent * s.inner + r;
                                 double sum_g = 0.0, sum_gx = 0.0;
                                 for (std::size_t i = 0; i < s.extent; ++i) {
                                   const std::size_t k = base + i * s.inner;
                                   const double gh = g[k] * gd[i];
                                   sum_g += gh;
                                   sum_gx += gh * xhat[k];
                                 }
                                 const double is = inv_std[o * s.inner + r];
                                 for (std::size_t i = 0; i < s.extent; ++i) {
                                   const std::size_t k = base + i * s.inner;
                                   const double gh = g[k] * gd[i];
                                   gx[k] += is * (gh - sum_g / n - xhat[k] * sum_gx / n);
                                 }
                               }
                             }
                           });
  }
  return y;
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  Tensor y = Tensor::scalar(total);
  if (needs_grad({&x})) {
    Tape::active()->record({x}, {y}, [x, y]() mutable {
      const double g = y.grad()[0];
      for (double& v : x.grad_buffer()) v += g;
    });
  }
  return y;
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  if (axis > 1) throw ShapeError("concat: axis must be 0 or 1");
  std::size_t rows = 0, cols = 0;
  for (const auto& p : parts) {
    require_matrix(p, "concat");
    if (axis == 0) {
      if (p.cols() != parts[0].cols()) throw ShapeError("concat: column extents differ");
      rows += p.rows();
    } else {
      if (p.rows() != parts[0].rows()) throw ShapeError("concat: row extents differ");
      cols += p.cols();
    }
  }
  if (axis == 0) cols = parts[0].cols();
  else rows = parts[0].rows();
  Tensor out(Shape{rows, cols});
  auto om = out.matrix();
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const auto pm = p.matrix();
    if (axis == 0) om.middleRows(off, pm.rows()) = pm;
    else om.middleCols(off, pm.cols()) = pm;
    off += axis == 0 ? pm.rows() : pm.cols();
  }
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (any && Tape::active() != nullptr) {
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    Tape::active()->record(inputs, {out}, [inputs, out, offsets, axis]() mutable {
      const auto g = out.grad_matrix();
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto& p = inputs[i];
        if (!p.requires_grad()) continue;
        auto gp = p.grad_matrix_buffer();
        if (axis == 0) gp += g.middleRows(offsets[i], gp.rows());
        else gp += g.middleCols(offsets[i], gp.cols());
      }
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_matrix(x, "gather_rows");
  if (rows.empty()) throw ShapeError("gather_rows: empty index list");
  Tensor out(Shape{rows.size(), x.cols()});
  auto om = out.matrix();
  const auto xm = x.matrix();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.rows()) throw ShapeError("gather_rows: row index out of range");
    om.row(static_cast<Eigen::Index>(i)) = xm.row(static_cast<Eigen::Index>(rows[i]));
  }
  if (needs_grad({&x})) {
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    Tape::active()->record({x}, {out}, [x, out, idx]() mutable {
      auto gx = x.grad_matrix_buffer();
      const auto g = out.grad_matrix();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        gx.row(static_cast<Eigen::Index>(idx[i])) += g.row(static_cast<Eigen::Index>(i));
      }
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_matrix(x, "slice_rows");
  if (begin >= end || end > x.rows()) throw ShapeError("slice_rows: bad range for " + to_string(x.shape()));
  std::vector<std::size_t> idx(end - begin);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = begin + i;
  return gather_rows(x, idx);
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_matrix(x, "slice_cols");
  if (begin >= end || end > x.cols()) throw ShapeError("slice_cols: bad range for " + to_string(x.shape()));
  const auto n = static_cast<Eigen::Index>(end - begin);
  const auto b = static_cast<Eigen::Index>(begin);
  Tensor out(Shape{x.rows(), end - begin});
  out.matrix() = x.matrix().middleCols(b, n);
  if (needs_grad({&x})) {
    Tape::active()->record({x}, {out}, [x, out, b, n]() mutable {
      x.grad_matrix_buffer().middleCols(b, n) += out.grad_matrix();
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  Tensor out = x.reshaped(std::move(shape));
  if (needs_grad({&x})) {
    Tape::active()->record({x}, {out}, [x, out]() mutable { accumulate(x, out.grad()); });
  }
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t pad) {
  if (x.dim() != 3 || weight.dim() != 4) {
    throw ShapeError("conv2d: expected [C×H×W] input and [Co×Ci×K×K] weight, got " + to_string(x.shape()) + ", " +
                     to_string(weight.shape()));
  }
  const std::size_t cin = x.extent(0), h = x.extent(1), w = x.extent(2);
  const std::size_t cout = weight.extent(0), k = weight.extent(2);
  if (weight.extent(1) != cin || weight.extent(3) != k) throw ShapeError("conv2d: weight does not match input channels");
  if (bias.size() != cout) throw ShapeError("conv2d: bias must have one value per output channel");
  if (stride == 0 || h + 2 * pad < k || w + 2 * pad < k) throw ShapeError("conv2d: input smaller than kernel");
  const std::size_t ho = (h + 2 * pad - k) / stride + 1;
  const std::size_t wo = (w + 2 * pad - k) / stride + 1;
  const std::size_t patch = cin * k * k;

  // im2col: [patch × (ho·wo)]
  RowMatrix cols = RowMatrix::Zero(static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(ho * wo));
  auto xd = x.data();
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const auto prow = static_cast<Eigen::Index>((c * k + ky) * k + kx);
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            cols(prow, static_cast<Eigen::Index>(oy * wo + ox)) =
                xd[(c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
  const ConstMatrixMap wm(weight.data().data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(patch));
  const Eigen::Map<const Eigen::VectorXd> bv(bias.data().data(), static_cast<Eigen::Index>(cout));
  Tensor y(Shape{cout, ho, wo});
  MatrixMap ym(y.data().data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(ho * wo));
  ym.noalias() = wm * cols;
  ym.colwise() += bv;

  if (needs_grad({&x, &weight, &bias})) {
    Tape::active()->record({x, weight, bias}, {y},
                           [x, weight, bias, y, cols = std::move(cols), cin, h, w, cout, k, ho, wo, patch, stride,
                            pad]() mutable {
                             const ConstMatrixMap g(y.grad().data(), static_cast<Eigen::Index>(cout),
                                                    static_cast<Eigen::Index>(ho * wo));
                             if (weight.requires_grad()) {
                               MatrixMap gw(weight.grad_buffer().data(), static_cast<Eigen::Index>(cout),
                                            static_cast<Eigen::Index>(patch));
                               gw.noalias() += g * cols.transpose();
                             }
                             if (bias.requires_grad()) {
                               Eigen::Map<Eigen::VectorXd> gb(bias.grad_buffer().data(), static_cast<Eigen::Index>(cout));
                               gb += g.rowwise().sum();
                             }
                             if (!x.requires_grad()) return;
                             const ConstMatrixMap wm(weight.data().data(), static_cast<Eigen::Index>(cout),
                                                     static_cast<Eigen::Index>(patch));
                             const RowMatrix gcols = wm.transpose() * g;
                             auto gx = x.grad_buffer();
                             for (std::size_t c = 0; c < cin; ++c) {
                               for (std::size_t ky = 0; ky < k; ++ky) {
                                 for (std::size_t kx = 0; kx < k; ++kx) {
                                   const auto prow = static_cast<Eigen::Index>((c * k + ky) * k + kx);
                                   for (std::size_t oy = 0; oy < ho; ++oy) {
                                     const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                                               static_cast<std::ptrdiff_t>(pad);
                                     if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                                     for (std::size_t ox = 0; ox < wo; ++ox) {
                                       const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                                                 static_cast<std::ptrdiff_t>(pad);
                                       if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                                       gx[(c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] +=
                                           gcols(prow, static_cast<Eigen::Index>(oy * wo + ox));
                                     }
                                   }
                                 }
                               }
                             }
                           });
  }
  return y;
}

Tensor bilinear_sample(const Tensor& feature_map, const Tensor& location) {
  if (feature_map.dim() != 3) throw ShapeError("bilinear_sample: feature map must be [H×W×d]");
  if (location.size() != 2) throw ShapeError("bilinear_sample: location must hold (x, y)");
  const double lx = location.at(0), ly = location.at(1);
  if (!std::isfinite(lx) || !std::isfinite(ly)) throw std::domain_error("bilinear_sample: non-finite location");
  const std::size_t h = feature_map.extent(0), w = feature_map.extent(1), d = feature_map.extent(2);
  const auto st = BilinearStencil::at(h, w, lx, ly);
  Tensor out(Shape{d});
  auto fd = feature_map.data();
  auto od = out.data();
  for (int t = 0; t < 4; ++t) {
    for (std::size_t c = 0; c < d; ++c) od[c] += st.weight[t] * fd[st.index[t] * d + c];
  }
  if (needs_grad({&feature_map, &location})) {
    Tape::active()->record({feature_map, location}, {out}, [feature_map, location, out, st, d]() mutable {
      auto g = out.grad();
      auto fd = feature_map.data();
      if (feature_map.requires_grad()) {
        auto gf = feature_map.grad_buffer();
        for (int t = 0; t < 4; ++t) {
          for (std::size_t c = 0; c < d; ++c) gf[st.index[t] * d + c] += st.weight[t] * g[c];
        }
      }
      if (location.requires_grad()) {
        auto gl = location.grad_buffer();
        for (int t = 0; t < 4; ++t) {
          double dot = 0.0;
          for (std::size_t c = 0; c < d; ++c) dot += g[c] * fd[st.index[t] * d + c];
          gl[0] += st.dweight_dx[t] * dot;
          gl[1] += st.dweight_dy[t] * dot;
        }
      }
    });
  }
  return out;
}

}  // namespace ddtr
