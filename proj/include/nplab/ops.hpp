#pragma once

#include <span>

#include "nplab/tensor.hpp"

// Differentiable primitives. Binary elementwise operations broadcast the
// operand with fewer axes over the leading axes of the other; its shape must
// equal the trailing axes of the larger shape.
namespace nplab {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor square(const Tensor& a);

/// [m, k] x [k, n] -> [m, n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// Swaps the two axes of a matrix.
Tensor transpose(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, std::size_t axis);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, std::size_t axis);

Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(std::span<const Tensor> parts, std::size_t axis = 0);
/// Elements [begin, end) along axis.
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
/// Vector [n] -> diagonal matrix [n, n].
Tensor diag(const Tensor& v);

/// Convolution proper (kernel reversed), zero padded:
///   out[o, j] = bias[o] + sum_{c,t} weight[o, c, k-1-t] * x[c, j*stride + t - padding].
/// x: [c_in, length], weight: [c_out, c_in, k], bias: [c_out] or undefined.
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);
/// Adjoint of conv1d. x: [c_in, length], weight: [c_in, c_out, k].
/// Output length is (length - 1) * stride - 2 * padding + k + output_padding.
Tensor conv_transpose1d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                        std::size_t stride, std::size_t padding,
                        std::size_t output_padding = 0);
/// x: [c_in, h, w], weight: [c_out, c_in, k, k].
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);
/// Adjoint of conv2d. x: [c_in, h, w], weight: [c_in, c_out, k, k].
Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                        std::size_t stride, std::size_t padding,
                        std::size_t output_padding = 0);

/// Log-density of y under N(mean, cov). Throws NumericalError when cov is not
/// positive definite.
Tensor mvn_logpdf(const Tensor& y, const Tensor& mean, const Tensor& cov);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

}  // namespace nplab
