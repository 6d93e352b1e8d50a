#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ddtr/tensor.hpp"

// Differentiable tensor operations. Each records its adjoint on the active
// tape when an operand requires a gradient.
namespace ddtr {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// a[m×n] + row[n] broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& row);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// Clamps to [1e-6, 1-1e-6] before log(p/(1-p)); no gradient through the clamp.
Tensor inverse_sigmoid(const Tensor& p);
inline constexpr double kInverseSigmoidEps = 1e-6;
Tensor log(const Tensor& x);

/// Max-stabilized softmax along `axis`. Rejects non-finite input.
Tensor softmax(const Tensor& x, std::size_t axis);
/// Normalizes each slice along `axis`, then applies gain/bias of that extent.
Tensor layer_norm(const Tensor& x, std::size_t axis, const Tensor& gain, const Tensor& bias);
inline constexpr double kLayerNormEps = 1e-5;

Tensor sum(const Tensor& x);

/// Concatenation of matrices along axis 0 (rows) or 1 (columns).
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& x, Shape shape);

/// 2-D convolution. x: [Cin×H×W], weight: [Cout×Cin×K×K], bias: [Cout].
/// Output: [Cout×Ho×Wo] with Ho = (H + 2·pad − K)/stride + 1.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t pad);

/// Bilinear read of feature_map [H×W×d] at normalized location [2] = (x, y).
/// Pixel centers sit at ((j+0.5)/W, (i+0.5)/H); coordinates clamp to the border.
Tensor bilinear_sample(const Tensor& feature_map, const Tensor& location);

}  // namespace ddtr
