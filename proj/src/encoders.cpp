#include "nplab/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nplab/errors.hpp"

namespace nplab {

std::vector<double> Grid::points() const {
  std::vector<double> p(size);
  for (std::size_t i = 0; i < size; ++i) p[i] = point(i);
  return p;
}

Grid make_grid(const Discretisation& d, std::span<const double> x_all) {
  if (!(d.points_per_unit > 0) || !(d.margin >= 0) || d.multiple == 0) {
    throw ParameterError("make_grid: need points_per_unit > 0, margin >= 0, multiple >= 1");
  }
  double lo = -d.margin, hi = d.margin;
  if (!x_all.empty()) {
    auto [mn, mx] = std::minmax_element(x_all.begin(), x_all.end());
    lo = *mn - d.margin;
    hi = *mx + d.margin;
  }
  // A small tolerance keeps endpoints that land on the lattice from gaining a
  // spurious extra point through rounding.
  const double tol = 1e-9;
  auto first = static_cast<long>(std::floor(lo * d.points_per_unit + tol));
  auto last = static_cast<long>(std::ceil(hi * d.points_per_unit - tol));
  const auto m = static_cast<long>(d.multiple);
  // Floor division towards negative infinity.
  long start = first >= 0 ? (first / m) * m : -((-first + m - 1) / m) * m;
  auto count = static_cast<std::size_t>(last - start + 1);
  count = (count + d.multiple - 1) / d.multiple * d.multiple;
  return {start, count, d.points_per_unit};
}

std::vector<std::size_t> canonical_order(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("context: inputs and outputs differ in length");
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return x[a] != x[b] ? x[a] < x[b] : y[a] < y[b];
  });
  return idx;
}

Tensor deepset_encode(std::span<const double> x_c, std::span<const double> y_c,
                      const std::function<Tensor(const Tensor&)>& phi, std::size_t dim) {
  auto order = canonical_order(x_c, y_c);
  if (order.empty()) return Tensor::zeros({dim});
  std::vector<double> xy;
  xy.reserve(2 * order.size());
  for (auto i : order) {
    xy.push_back(x_c[i]);
    xy.push_back(y_c[i]);
  }
  auto h = phi(Tensor({order.size(), 2}, std::move(xy)));
  if (h.shape() != Shape{order.size(), dim}) {
    throw ShapeError("deepset_encode: phi returned " + to_string(h.shape()) + ", expected " +
                     to_string(Shape{order.size(), dim}));
  }
  return mean(h, 0);
}

Tensor gaussian_weights(std::span<const double> rows, std::span<const double> cols,
                        const Tensor& length_scale) {
  std::vector<double> d2(rows.size() * cols.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) {
      double d = rows[i] - cols[j];
      d2[i * cols.size() + j] = d * d;
    }
  auto coef = scale(div(Tensor::scalar(1.0), square(length_scale)), -0.5);
  return exp(mul(Tensor({rows.size(), cols.size()}, std::move(d2)), coef));
}

FunctionalEncoding setconv_encode(std::span<const double> x_c, std::span<const double> y_c,
                                  const Grid& grid, const Tensor& length_scale, bool divide) {
  auto order = canonical_order(x_c, y_c);
  const std::size_t k = grid.size;
  if (order.empty()) return {grid, Tensor::zeros({2, k})};
  std::vector<double> xs, ys;
  for (auto i : order) {
    xs.push_back(x_c[i]);
    ys.push_back(y_c[i]);
  }
  auto u = grid.points();
  auto w = gaussian_weights(u, xs, length_scale);                       // [K, N]
  auto data = reshape(matmul(w, Tensor({ys.size(), 1}, ys)), {1, k});
  auto density = reshape(sum(w, 1), {1, k});
  if (divide) data = div(data, add_scalar(density, 1e-8));
  std::vector<Tensor> parts{data, density};
  return {grid, concat(parts, 0)};
}

FunctionalEncoding setconv_encode(std::span<const double> x_c, std::span<const double> y_c,
                                  const Grid& grid, double length_scale, bool divide) {
  if (!(length_scale > 0)) throw ParameterError("setconv_encode: length scale must be positive");
  return setconv_encode(x_c, y_c, grid, Tensor::scalar(length_scale), divide);
}

Tensor setconv_decode(const Tensor& values, const Grid& grid, std::span<const double> x_query,
                      const Tensor& length_scale) {
  if (values.rank() != 2 || values.dim(1) != grid.size) {
    throw ShapeError("setconv_decode: values " + to_string(values.shape()) + " do not match grid of " +
                     std::to_string(grid.size) + " points");
  }
  if (x_query.empty()) return Tensor::zeros({values.dim(0), 0});
  auto u = grid.points();
  return matmul(values, gaussian_weights(u, x_query, length_scale));  // [C, K] x [K, Q]
}

Tensor setconv_decode(const Tensor& values, const Grid& grid, std::span<const double> x_query,
                      double length_scale) {
  if (!(length_scale > 0)) throw ParameterError("setconv_decode: length scale must be positive");
  return setconv_decode(values, grid, x_query, Tensor::scalar(length_scale));
}

}  // namespace nplab
