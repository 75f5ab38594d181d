#pragma once

#include <functional>
#include <vector>

#include "nplab/ops.hpp"

namespace nplab {

struct Discretisation {
  double points_per_unit = 64.0;
  double margin = 0.1;
  // Grid start and length are rounded outward to multiples of this many
  // points so that a strided CNN sees the same sampling phase for inputs
  // shifted by a multiple of `multiple / points_per_unit`.
  std::size_t multiple = 1;
};

/// Uniform grid u_k = k / ppu for k = start, ..., start + size - 1. Points sit
/// on a global lattice, so grids of shifted inputs are shifted lattices.
struct Grid {
  long start = 0;
  std::size_t size = 0;
  double points_per_unit = 64.0;

  double spacing() const { return 1.0 / points_per_unit; }
  double point(std::size_t i) const { return static_cast<double>(start + static_cast<long>(i)) / points_per_unit; }
  std::vector<double> points() const;
};

/// Smallest aligned grid covering [min(x) - margin, max(x) + margin]; an empty
/// input set gives the span [-margin, margin].
Grid make_grid(const Discretisation& d, std::span<const double> x_all);

/// Indices that sort the context by (x, y).
std::vector<std::size_t> canonical_order(std::span<const double> x, std::span<const double> y);

/// mean_n phi([x_n, y_n]) with phi mapping [N, 2] to [N, dim]; zeros for an
/// empty context. The context is canonically sorted before pooling.
Tensor deepset_encode(std::span<const double> x_c, std::span<const double> y_c,
                      const std::function<Tensor(const Tensor&)>& phi, std::size_t dim);

/// Discretised set-convolution encoding.
struct FunctionalEncoding {
  Grid grid;
  Tensor channels;  // [C, K]
};

/// Data and density channels [2, K] with Gaussian bumps of width `length_scale`
/// (a positive scalar tensor). With `divide`, the data channel becomes
/// data / (density + 1e-8).
FunctionalEncoding setconv_encode(std::span<const double> x_c, std::span<const double> y_c,
                                  const Grid& grid, const Tensor& length_scale, bool divide);
FunctionalEncoding setconv_encode(std::span<const double> x_c, std::span<const double> y_c,
                                  const Grid& grid, double length_scale, bool divide);

/// out[c, q] = sum_k values[c, k] exp(-(x_q - u_k)^2 / (2 l^2)).
Tensor setconv_decode(const Tensor& values, const Grid& grid, std::span<const double> x_query,
                      const Tensor& length_scale);
Tensor setconv_decode(const Tensor& values, const Grid& grid, std::span<const double> x_query,
                      double length_scale);

/// Matrix [rows.size(), cols.size()] of exp(-(r - c)^2 / (2 l^2)).
Tensor gaussian_weights(std::span<const double> rows, std::span<const double> cols,
                        const Tensor& length_scale);

}  // namespace nplab
