#include "nplab/ops.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "nplab/errors.hpp"

namespace nplab {

namespace {

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " +
                   to_string(b));
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

struct Broadcast {
  Shape out;
  std::size_t na;
  std::size_t nb;
};

Broadcast broadcast(const char* op, const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa == sb || is_suffix(sb, sa)) return {sa, a.size(), b.size()};
  if (is_suffix(sa, sb)) return {sb, a.size(), b.size()};
  shape_error(op, sa, sb);
}

// Elementwise binary op with broadcasting. f(x, y) is the value; dfa/dfb are
// partial derivatives evaluated from (x, y, out).
template <class F, class DA, class DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, DA dfa, DB dfb) {
  auto bc = broadcast(op, a, b);
  std::size_t n = numel(bc.out);
  std::vector<double> out(n);
  auto av = a.values();
  auto bv = b.values();
  if (bc.na == n && bc.nb == n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i], bv[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i % bc.na], bv[i % bc.nb]);
  }
  auto na = bc.na, nb = bc.nb;
  return Tensor::from_op(
      op, bc.out, std::move(out), {a, b},
      [a, b, na, nb, dfa, dfb](std::span<const double> g, std::span<std::vector<double>> gi) {
        auto av = a.values();
        auto bv = b.values();
        for (std::size_t i = 0; i < g.size(); ++i) {
          double x = av[i % na], y = bv[i % nb];
          if (!gi[0].empty()) gi[0][i % na] += g[i] * dfa(x, y);
          if (!gi[1].empty()) gi[1][i % nb] += g[i] * dfb(x, y);
        }
      });
}

template <class F, class DF>
Tensor unary(const char* op, const Tensor& a, F f, DF df) {
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return Tensor::from_op(op, a.shape(), std::move(out), {a},
                         [a, df](std::span<const double> g, std::span<std::vector<double>> gi) {
                           auto av = a.values();
                           for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] * df(av[i]);
                         });
}

double softplus_value(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

// Splits shape around axis into (outer, extent, inner).
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const char* op, const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + to_string(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

std::size_t conv_out_length(const char* op, std::size_t length, std::size_t k,
                            std::size_t stride, std::size_t padding) {
  if (stride == 0) throw ShapeError(std::string(op) + ": stride must be positive");
  if (length + 2 * padding < k) {
    throw ShapeError(std::string(op) + ": input length " + std::to_string(length) +
                     " too short for kernel width " + std::to_string(k));
  }
  return (length + 2 * padding - k) / stride + 1;
}

void check_bias(const char* op, const Tensor& bias, std::size_t channels) {
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != channels)) {
    shape_error(op, bias.shape(), Shape{channels});
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

Tensor neg(const Tensor& a) {
  return unary("neg", a, [](double x) { return -x; }, [](double) { return -1.0; });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      "scale", a, [factor](double x) { return factor * x; },
      [factor](double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double offset) {
  return unary(
      "add_scalar", a, [offset](double x) { return x + offset; }, [](double) { return 1.0; });
}

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Tensor log(const Tensor& a) {
  return unary(
      "log", a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](double x) { return x > 0 ? x : 0.0; },
      [](double x) { return x > 0 ? 1.0 : 0.0; });
}

Tensor softplus(const Tensor& a) { return unary("softplus", a, softplus_value, sigmoid); }

Tensor square(const Tensor& a) {
  return unary(
      "square", a, [](double x) { return x * x; }, [](double x) { return 2 * x; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    shape_error("matmul", a.shape(), b.shape());
  }
  std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      double s = av[i * k + p];
      if (s == 0.0) continue;
      const double* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
    }
  }
  return Tensor::from_op(
      "matmul", Shape{m, n}, std::move(out), {a, b},
      [a, b, m, k, n](std::span<const double> g, std::span<std::vector<double>> gi) {
        auto av = a.values();
        auto bv = b.values();
        if (!gi[0].empty()) {
          for (std::size_t i = 0; i < m; ++i) {
            const double* grow = g.data() + i * n;
            for (std::size_t p = 0; p < k; ++p) {
              const double* brow = bv.data() + p * n;
              double s = 0.0;
              for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
              gi[0][i * k + p] += s;
            }
          }
        }
        if (!gi[1].empty()) {
          for (std::size_t i = 0; i < m; ++i) {
            const double* grow = g.data() + i * n;
            for (std::size_t p = 0; p < k; ++p) {
              double s = av[i * k + p];
              if (s == 0.0) continue;
              double* drow = gi[1].data() + p * n;
              for (std::size_t j = 0; j < n; ++j) drow[j] += s * grow[j];
            }
          }
        }
      });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expected a matrix, got " + to_string(a.shape()));
  std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  auto av = a.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  return Tensor::from_op("transpose", Shape{n, m}, std::move(out), {a},
                         [m, n](std::span<const double> g, std::span<std::vector<double>> gi) {
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < n; ++j) gi[0][i * n + j] += g[j * m + i];
                         });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return Tensor::from_op("sum", Shape{}, {s}, {a},
                         [](std::span<const double> g, std::span<std::vector<double>> gi) {
                           for (auto& v : gi[0]) v += g[0];
                         });
}

Tensor sum(const Tensor& a, std::size_t axis) {
  auto s = split_axis("sum", a.shape(), axis);
  Shape shape = a.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(s.outer * s.inner, 0.0);
  auto av = a.values();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[o * s.inner + i] += av[(o * s.extent + e) * s.inner + i];
  return Tensor::from_op("sum_axis", std::move(shape), std::move(out), {a},
                         [s](std::span<const double> g, std::span<std::vector<double>> gi) {
                           for (std::size_t o = 0; o < s.outer; ++o)
                             for (std::size_t e = 0; e < s.extent; ++e)
                               for (std::size_t i = 0; i < s.inner; ++i)
                                 gi[0][(o * s.extent + e) * s.inner + i] += g[o * s.inner + i];
                         });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor mean(const Tensor& a, std::size_t axis) {
  auto extent = a.dim(axis);
  if (extent == 0) throw ShapeError("mean: empty axis");
  return scale(sum(a, axis), 1.0 / static_cast<double>(extent));
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) shape_error("reshape", a.shape(), shape);
  std::vector<double> out(a.values().begin(), a.values().end());
  return Tensor::from_op("reshape", std::move(shape), std::move(out), {a},
                         [](std::span<const double> g, std::span<std::vector<double>> gi) {
                           for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
                         });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape shape = parts[0].shape();
  auto first = split_axis("concat", shape, axis);
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (const auto& p : parts) {
    auto s = split_axis("concat", p.shape(), axis);
    if (p.rank() != shape.size() || s.outer != first.outer || s.inner != first.inner) {
      shape_error("concat", shape, p.shape());
    }
    extents.push_back(s.extent);
    total += s.extent;
  }
  shape[axis] = total;
  std::size_t outer = first.outer, inner = first.inner;
  std::vector<double> out(outer * total * inner);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto pv = parts[k].values();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pv.data() + o * extents[k] * inner, extents[k] * inner,
                  out.data() + (o * total + offset) * inner);
    offset += extents[k];
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return Tensor::from_op(
      "concat", std::move(shape), std::move(out), std::move(inputs),
      [extents, outer, inner, total](std::span<const double> g,
                                     std::span<std::vector<double>> gi) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < extents.size(); ++k) {
          if (!gi[k].empty()) {
            for (std::size_t o = 0; o < outer; ++o)
              for (std::size_t j = 0; j < extents[k] * inner; ++j)
                gi[k][o * extents[k] * inner + j] += g[(o * total + offset) * inner + j];
          }
          offset += extents[k];
        }
      });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  auto s = split_axis("slice", a.shape(), axis);
  if (begin > end || end > s.extent) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of bounds for shape " + to_string(a.shape()));
  }
  Shape shape = a.shape();
  std::size_t len = end - begin;
  shape[axis] = len;
  std::vector<double> out(s.outer * len * s.inner);
  auto av = a.values();
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(av.data() + (o * s.extent + begin) * s.inner, len * s.inner,
                out.data() + o * len * s.inner);
  return Tensor::from_op("slice", std::move(shape), std::move(out), {a},
                         [s, begin, len](std::span<const double> g, std::span<std::vector<double>> gi) {
                           for (std::size_t o = 0; o < s.outer; ++o)
                             for (std::size_t j = 0; j < len * s.inner; ++j)
                               gi[0][(o * s.extent + begin) * s.inner + j] += g[o * len * s.inner + j];
                         });
}

Tensor diag(const Tensor& v) {
  if (v.rank() != 1) throw ShapeError("diag: expected a vector, got " + to_string(v.shape()));
  std::size_t n = v.dim(0);
  std::vector<double> out(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) out[i * n + i] = v[i];
  return Tensor::from_op("diag", Shape{n, n}, std::move(out), {v},
                         [n](std::span<const double> g, std::span<std::vector<double>> gi) {
                           for (std::size_t i = 0; i < n; ++i) gi[0][i] += g[i * n + i];
                         });
}

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  if (x.rank() != 2 || weight.rank() != 3 || weight.dim(1) != x.dim(0)) {
    shape_error("conv1d", x.shape(), weight.shape());
  }
  const std::size_t cin = x.dim(0), len = x.dim(1);
  const std::size_t cout = weight.dim(0), k = weight.dim(2);
  check_bias("conv1d", bias, cout);
  const std::size_t lout = conv_out_length("conv1d", len, k, stride, padding);
  std::vector<double> out(cout * lout, 0.0);
  auto xv = x.values();
  auto wv = weight.values();
  if (bias.defined()) {
    for (std::size_t o = 0; o < cout; ++o) std::fill_n(out.data() + o * lout, lout, bias[o]);
  }
  // Output position j reads input j * stride + t - padding.
  auto valid = [=](std::size_t t, std::size_t& lo, std::size_t& hi) {
    // Smallest j with j * stride + t >= padding, largest with < len + padding.
    lo = t >= padding ? 0 : (padding - t + stride - 1) / stride;
    if (len + padding <= t) {
      hi = 0;
      return;
    }
    hi = std::min(lout, (len + padding - t - 1) / stride + 1);
  };
  for (std::size_t o = 0; o < cout; ++o) {
    double* orow = out.data() + o * lout;
    for (std::size_t c = 0; c < cin; ++c) {
      const double* xrow = xv.data() + c * len;
      for (std::size_t t = 0; t < k; ++t) {
        double w = wv[(o * cin + c) * k + (k - 1 - t)];
        std::size_t lo, hi;
        valid(t, lo, hi);
        for (std::size_t j = lo; j < hi; ++j) orow[j] += w * xrow[j * stride + t - padding];
      }
    }
  }
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor::from_op(
      "conv1d", Shape{cout, lout}, std::move(out), std::move(inputs),
      [x, weight, cin, len, cout, k, lout, stride, padding, valid](
          std::span<const double> g, std::span<std::vector<double>> gi) {
        auto xv = x.values();
        auto wv = weight.values();
        for (std::size_t o = 0; o < cout; ++o) {
          const double* grow = g.data() + o * lout;
          for (std::size_t c = 0; c < cin; ++c) {
            const double* xrow = xv.data() + c * len;
            for (std::size_t t = 0; t < k; ++t) {
              std::size_t lo, hi;
              valid(t, lo, hi);
              if (!gi[0].empty()) {
                double w = wv[(o * cin + c) * k + (k - 1 - t)];
                double* dx = gi[0].data() + c * len;
                for (std::size_t j = lo; j < hi; ++j) dx[j * stride + t - padding] += w * grow[j];
              }
              if (!gi[1].empty()) {
                double s = 0.0;
                for (std::size_t j = lo; j < hi; ++j) s += grow[j] * xrow[j * stride + t - padding];
                gi[1][(o * cin + c) * k + (k - 1 - t)] += s;
              }
            }
          }
          if (gi.size() > 2 && !gi[2].empty()) {
            double s = 0.0;
            for (std::size_t j = 0; j < lout; ++j) s += grow[j];
            gi[2][o] += s;
          }
        }
      });
}

Tensor conv_transpose1d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                        std::size_t stride, std::size_t padding, std::size_t output_padding) {
  if (x.rank() != 2 || weight.rank() != 3 || weight.dim(0) != x.dim(0)) {
    shape_error("conv_transpose1d", x.shape(), weight.shape());
  }
  if (stride == 0) throw ShapeError("conv_transpose1d: stride must be positive");
  const std::size_t cin = x.dim(0), len = x.dim(1);
  const std::size_t cout = weight.dim(1), k = weight.dim(2);
  check_bias("conv_transpose1d", bias, cout);
  const std::ptrdiff_t full = static_cast<std::ptrdiff_t>((len - 1) * stride + k + output_padding) -
                              static_cast<std::ptrdiff_t>(2 * padding);
  if (len == 0 || full <= 0) {
    throw ShapeError("conv_transpose1d: empty output for input " + to_string(x.shape()));
  }
  const std::size_t lout = static_cast<std::size_t>(full);
  // Input position j contributes to output j * stride + t - padding.
  auto valid = [=](std::size_t t, std::size_t& lo, std::size_t& hi) {
    lo = t >= padding ? 0 : (padding - t + stride - 1) / stride;
    if (lout + padding <= t) {
      hi = 0;
      return;
    }
    hi = std::min(len, (lout + padding - t - 1) / stride + 1);
  };
  std::vector<double> out(cout * lout, 0.0);
  auto xv = x.values();
  auto wv = weight.values();
  if (bias.defined()) {
    for (std::size_t o = 0; o < cout; ++o) std::fill_n(out.data() + o * lout, lout, bias[o]);
  }
  for (std::size_t c = 0; c < cin; ++c) {
    const double* xrow = xv.data() + c * len;
    for (std::size_t o = 0; o < cout; ++o) {
      double* orow = out.data() + o * lout;
      for (std::size_t t = 0; t < k; ++t) {
        double w = wv[(c * cout + o) * k + (k - 1 - t)];
        std::size_t lo, hi;
        valid(t, lo, hi);
        for (std::size_t j = lo; j < hi; ++j) orow[j * stride + t - padding] += w * xrow[j];
      }
    }
  }
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor::from_op(
      "conv_transpose1d", Shape{cout, lout}, std::move(out), std::move(inputs),
      [x, weight, cin, len, cout, k, lout, stride, padding, valid](
          std::span<const double> g, std::span<std::vector<double>> gi) {
        auto xv = x.values();
        auto wv = weight.values();
        for (std::size_t c = 0; c < cin; ++c) {
          const double* xrow = xv.data() + c * len;
          for (std::size_t o = 0; o < cout; ++o) {
            const double* grow = g.data() + o * lout;
            for (std::size_t t = 0; t < k; ++t) {
              std::size_t lo, hi;
              valid(t, lo, hi);
              if (!gi[0].empty()) {
                double w = wv[(c * cout + o) * k + (k - 1 - t)];
                double* dx = gi[0].data() + c * len;
                for (std::size_t j = lo; j < hi; ++j) dx[j] += w * grow[j * stride + t - padding];
              }
              if (!gi[1].empty()) {
                double s = 0.0;
                for (std::size_t j = lo; j < hi; ++j) s += xrow[j] * grow[j * stride + t - padding];
                gi[1][(c * cout + o) * k + (k - 1 - t)] += s;
              }
            }
          }
        }
        if (gi.size() > 2 && !gi[2].empty()) {
          for (std::size_t o = 0; o < cout; ++o) {
            double s = 0.0;
            for (std::size_t j = 0; j < lout; ++j) s += g[o * lout + j];
            gi[2][o] += s;
          }
        }
      });
}

namespace {

// Range of output indices i such that i * stride + t - padding lies in [0, n).
struct Range {
  std::size_t lo, hi;
};

Range conv_range(std::size_t t, std::size_t n, std::size_t nout, std::size_t stride,
                 std::size_t padding) {
  std::size_t lo = t >= padding ? 0 : (padding - t + stride - 1) / stride;
  if (n + padding <= t) return {0, 0};
  std::size_t hi = std::min(nout, (n + padding - t - 1) / stride + 1);
  return {lo, std::max(lo, hi)};
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  if (x.rank() != 3 || weight.rank() != 4 || weight.dim(1) != x.dim(0) ||
      weight.dim(2) != weight.dim(3)) {
    shape_error("conv2d", x.shape(), weight.shape());
  }
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t cout = weight.dim(0), k = weight.dim(2);
  check_bias("conv2d", bias, cout);
  const std::size_t hout = conv_out_length("conv2d", h, k, stride, padding);
  const std::size_t wout = conv_out_length("conv2d", w, k, stride, padding);
  std::vector<double> out(cout * hout * wout, 0.0);
  auto xv = x.values();
  auto wv = weight.values();
  if (bias.defined()) {
    for (std::size_t o = 0; o < cout; ++o)
      std::fill_n(out.data() + o * hout * wout, hout * wout, bias[o]);
  }
  for (std::size_t o = 0; o < cout; ++o) {
    for (std::size_t c = 0; c < cin; ++c) {
      const double* xplane = xv.data() + c * h * w;
      double* oplane = out.data() + o * hout * wout;
      for (std::size_t p = 0; p < k; ++p) {
        auto ri = conv_range(p, h, hout, stride, padding);
        for (std::size_t q = 0; q < k; ++q) {
          double wt = wv[((o * cin + c) * k + (k - 1 - p)) * k + (k - 1 - q)];
          auto rj = conv_range(q, w, wout, stride, padding);
          for (std::size_t i = ri.lo; i < ri.hi; ++i) {
            const double* xrow = xplane + (i * stride + p - padding) * w;
            double* orow = oplane + i * wout;
            for (std::size_t j = rj.lo; j < rj.hi; ++j) orow[j] += wt * xrow[j * stride + q - padding];
          }
        }
      }
    }
  }
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor::from_op(
      "conv2d", Shape{cout, hout, wout}, std::move(out), std::move(inputs),
      [x, weight, cin, h, w, cout, k, hout, wout, stride, padding](
          std::span<const double> g, std::span<std::vector<double>> gi) {
        auto xv = x.values();
        auto wv = weight.values();
        for (std::size_t o = 0; o < cout; ++o) {
          const double* gplane = g.data() + o * hout * wout;
          for (std::size_t c = 0; c < cin; ++c) {
            const double* xplane = xv.data() + c * h * w;
            for (std::size_t p = 0; p < k; ++p) {
              auto ri = conv_range(p, h, hout, stride, padding);
              for (std::size_t q = 0; q < k; ++q) {
                auto rj = conv_range(q, w, wout, stride, padding);
                std::size_t widx = ((o * cin + c) * k + (k - 1 - p)) * k + (k - 1 - q);
                double wt = wv[widx];
                double s = 0.0;
                for (std::size_t i = ri.lo; i < ri.hi; ++i) {
                  std::size_t xoff = (i * stride + p - padding) * w;
                  const double* grow = gplane + i * wout;
                  const double* xrow = xplane + xoff;
                  if (!gi[0].empty()) {
                    double* dx = gi[0].data() + c * h * w + xoff;
                    for (std::size_t j = rj.lo; j < rj.hi; ++j)
                      dx[j * stride + q - padding] += wt * grow[j];
                  }
                  for (std::size_t j = rj.lo; j < rj.hi; ++j)
                    s += grow[j] * xrow[j * stride + q - padding];
                }
                if (!gi[1].empty()) gi[1][widx] += s;
              }
            }
          }
          if (gi.size() > 2 && !gi[2].empty()) {
            double s = 0.0;
            for (std::size_t j = 0; j < hout * wout; ++j) s += gplane[j];
            gi[2][o] += s;
          }
        }
      });
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                        std::size_t stride, std::size_t padding, std::size_t output_padding) {
  if (x.rank() != 3 || weight.rank() != 4 || weight.dim(0) != x.dim(0) ||
      weight.dim(2) != weight.dim(3)) {
    shape_error("conv_transpose2d", x.shape(), weight.shape());
  }
  if (stride == 0) throw ShapeError("conv_transpose2d: stride must be positive");
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t cout = weight.dim(1), k = weight.dim(2);
  check_bias("conv_transpose2d", bias, cout);
  auto out_len = [&](std::size_t n) {
    std::ptrdiff_t full = static_cast<std::ptrdiff_t>((n - 1) * stride + k + output_padding) -
                          static_cast<std::ptrdiff_t>(2 * padding);
    if (n == 0 || full <= 0) {
      throw ShapeError("conv_transpose2d: empty output for input " + to_string(x.shape()));
    }
    return static_cast<std::size_t>(full);
  };
  const std::size_t hout = out_len(h), wout = out_len(w);
  std::vector<double> out(cout * hout * wout, 0.0);
  auto xv = x.values();
  auto wv = weight.values();
  if (bias.defined()) {
    for (std::size_t o = 0; o < cout; ++o)
      std::fill_n(out.data() + o * hout * wout, hout * wout, bias[o]);
  }
  // Input (i, j) contributes to output (i * stride + p - padding, j * stride + q - padding).
  for (std::size_t c = 0; c < cin; ++c) {
    const double* xplane = xv.data() + c * h * w;
    for (std::size_t o = 0; o < cout; ++o) {
      double* oplane = out.data() + o * hout * wout;
      for (std::size_t p = 0; p < k; ++p) {
        auto ri = conv_range(p, hout, h, stride, padding);
        for (std::size_t q = 0; q < k; ++q) {
          double wt = wv[((c * cout + o) * k + (k - 1 - p)) * k + (k - 1 - q)];
          auto rj = conv_range(q, wout, w, stride, padding);
          for (std::size_t i = ri.lo; i < ri.hi; ++i) {
            double* orow = oplane + (i * stride + p - padding) * wout;
            const double* xrow = xplane + i * w;
            for (std::size_t j = rj.lo; j < rj.hi; ++j) orow[j * stride + q - padding] += wt * xrow[j];
          }
        }
      }
    }
  }
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor::from_op(
      "conv_transpose2d", Shape{cout, hout, wout}, std::move(out), std::move(inputs),
      [x, weight, cin, h, w, cout, k, hout, wout, stride, padding](
          std::span<const double> g, std::span<std::vector<double>> gi) {
        auto xv = x.values();
        auto wv = weight.values();
        for (std::size_t c = 0; c < cin; ++c) {
          const double* xplane = xv.data() + c * h * w;
          for (std::size_t o = 0; o < cout; ++o) {
            const double* gplane = g.data() + o * hout * wout;
            for (std::size_t p = 0; p < k; ++p) {
              auto ri = conv_range(p, hout, h, stride, padding);
              for (std::size_t q = 0; q < k; ++q) {
                auto rj = conv_range(q, wout, w, stride, padding);
                std::size_t widx = ((c * cout + o) * k + (k - 1 - p)) * k + (k - 1 - q);
                double wt = wv[widx];
                double s = 0.0;
                for (std::size_t i = ri.lo; i < ri.hi; ++i) {
                  const double* grow = gplane + (i * stride + p - padding) * wout;
                  const double* xrow = xplane + i * w;
                  if (!gi[0].empty()) {
                    double* dx = gi[0].data() + c * h * w + i * w;
                    for (std::size_t j = rj.lo; j < rj.hi; ++j)
                      dx[j] += wt * grow[j * stride + q - padding];
                  }
                  for (std::size_t j = rj.lo; j < rj.hi; ++j)
                    s += xrow[j] * grow[j * stride + q - padding];
                }
                if (!gi[1].empty()) gi[1][widx] += s;
              }
            }
          }
        }
        if (gi.size() > 2 && !gi[2].empty()) {
          for (std::size_t o = 0; o < cout; ++o) {
            double s = 0.0;
            for (std::size_t j = 0; j < hout * wout; ++j) s += g[o * hout * wout + j];
            gi[2][o] += s;
          }
        }
      });
}

Tensor mvn_logpdf(const Tensor& y, const Tensor& mean, const Tensor& cov) {
  if (y.rank() != 1 || mean.shape() != y.shape()) shape_error("mvn_logpdf", y.shape(), mean.shape());
  const std::size_t n = y.dim(0);
  if (cov.shape() != Shape{n, n}) shape_error("mvn_logpdf", y.shape(), cov.shape());
  using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Matrix> sigma(cov.values().data(), static_cast<Eigen::Index>(n),
                                 static_cast<Eigen::Index>(n));
  // The density only sees the symmetric part, so the gradient below is the
  // symmetric one.
  Eigen::LLT<Matrix> llt(Matrix(0.5 * (sigma + sigma.transpose())));
  if (llt.info() != Eigen::Success) throw NumericalError("mvn_logpdf: covariance is not positive definite");
  Eigen::VectorXd r(n);
  for (std::size_t i = 0; i < n; ++i) r[i] = y[i] - mean[i];
  Eigen::VectorXd alpha = llt.solve(r);
  double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  double value = -0.5 * (r.dot(alpha) + logdet + static_cast<double>(n) * std::log(2 * std::numbers::pi));
  return Tensor::from_op(
      "mvn_logpdf", Shape{}, {value}, {y, mean, cov},
      [llt, alpha, n](std::span<const double> g, std::span<std::vector<double>> gi) {
        double s = g[0];
        if (!gi[0].empty())
          for (std::size_t i = 0; i < n; ++i) gi[0][i] -= s * alpha[i];
        if (!gi[1].empty())
          for (std::size_t i = 0; i < n; ++i) gi[1][i] += s * alpha[i];
        if (!gi[2].empty()) {
          Matrix inv = llt.solve(Matrix::Identity(n, n));
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
              gi[2][i * n + j] += 0.5 * s * (alpha[i] * alpha[j] - inv(i, j));
        }
      });
}

}  // namespace nplab
