#pragma once

#include <string>
#include <utility>
#include <vector>

#include "nplab/ops.hpp"
#include "nplab/rng.hpp"

namespace nplab {

/// Named trainable tensors in creation order.
class ParameterSet {
 public:
  /// Registers a parameter with N(0, std^2) entries (zeros when std == 0).
  Tensor create(const std::string& name, Shape shape, double std, Rng& rng);
  Tensor create_constant(const std::string& name, Shape shape, double value);

  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::vector<Tensor> tensors() const;
  std::size_t count() const;
  /// Copies values from `other` by name; shapes must agree.
  void assign(const std::vector<std::pair<std::string, Tensor>>& other);

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  Linear() = default;
  Linear(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng);
  /// x: [N, in] -> [N, out].
  Tensor operator()(const Tensor& x) const;
};

/// Linear layers with relu between them (none after the last).
struct MLP {
  std::vector<Linear> layers;

  MLP() = default;
  /// `depth` linear layers: in -> width -> ... -> width -> out.
  MLP(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t width,
      std::size_t out, std::size_t depth, Rng& rng);
  Tensor operator()(const Tensor& x) const;
};

/// U-Net over a 1-D grid. Every level halves the length with a stride-2
/// convolution; the way back up uses stride-2 transposed convolutions whose
/// outputs are concatenated with the skip connection of the same resolution.
/// Input lengths must be divisible by 2^levels.
struct UNet1d {
  std::size_t levels = 0;
  std::size_t kernel = 5;
  Tensor in_w, in_b;
  std::vector<Tensor> down_w, down_b, up_w, up_b;
  Tensor out_w, out_b;

  UNet1d() = default;
  UNet1d(ParameterSet& ps, const std::string& name, std::size_t in_channels, std::size_t channels,
         std::size_t out_channels, std::size_t levels, std::size_t kernel, Rng& rng);
  /// x: [in_channels, L] -> [out_channels, L].
  Tensor operator()(const Tensor& x) const;
};

/// The same architecture over a square 2-D grid.
struct UNet2d {
  std::size_t levels = 0;
  std::size_t kernel = 5;
  Tensor in_w, in_b;
  std::vector<Tensor> down_w, down_b, up_w, up_b;
  Tensor out_w, out_b;

  UNet2d() = default;
  UNet2d(ParameterSet& ps, const std::string& name, std::size_t in_channels, std::size_t channels,
         std::size_t out_channels, std::size_t levels, std::size_t kernel, Rng& rng);
  /// x: [in_channels, L, L] -> [out_channels, L, L].
  Tensor operator()(const Tensor& x) const;
};

/// log(exp(y) - 1), the inverse of softplus.
double inverse_softplus(double y);

}  // namespace nplab
