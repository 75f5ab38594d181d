#include "nplab/nn.hpp"

#include <cmath>

#include "nplab/errors.hpp"

namespace nplab {

namespace {

// Small random biases keep relu pre-activations off the kink when a grid
// region carries no data, which happens for every empty-context input.
constexpr double kBiasStd = 0.05;

}  // namespace

Tensor ParameterSet::create(const std::string& name, Shape shape, double std, Rng& rng) {
  std::vector<double> v(numel(shape), 0.0);
  if (std > 0) {
    std::normal_distribution<double> normal(0.0, std);
    for (auto& x : v) x = normal(rng);
  }
  Tensor t = Tensor::parameter(std::move(shape), std::move(v));
  items_.emplace_back(name, t);
  return t;
}

Tensor ParameterSet::create_constant(const std::string& name, Shape shape, double value) {
  Tensor t = Tensor::parameter(shape, std::vector<double>(numel(shape), value));
  items_.emplace_back(name, t);
  return t;
}

std::vector<Tensor> ParameterSet::tensors() const {
  std::vector<Tensor> out;
  for (const auto& [_, t] : items_) out.push_back(t);
  return out;
}

std::size_t ParameterSet::count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : items_) n += t.size();
  return n;
}

void ParameterSet::assign(const std::vector<std::pair<std::string, Tensor>>& other) {
  for (auto& [name, t] : items_) {
    const Tensor* src = nullptr;
    for (const auto& [n2, t2] : other)
      if (n2 == name) src = &t2;
    if (!src) throw ParameterError("parameters: missing tensor '" + name + "'");
    if (src->shape() != t.shape()) {
      throw ShapeError("parameters: tensor '" + name + "' has shape " + to_string(src->shape()) +
                       ", expected " + to_string(t.shape()));
    }
    auto dst = t.mutable_values();
    std::copy(src->values().begin(), src->values().end(), dst.begin());
  }
}

Linear::Linear(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng)
    : weight(ps.create(name + ".weight", {in, out}, std::sqrt(2.0 / static_cast<double>(in)), rng)),
      bias(ps.create(name + ".bias", {out}, kBiasStd, rng)) {}

Tensor Linear::operator()(const Tensor& x) const { return add(matmul(x, weight), bias); }

MLP::MLP(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t width,
         std::size_t out, std::size_t depth, Rng& rng) {
  if (depth == 0) throw ParameterError("mlp: depth must be at least 1");
  for (std::size_t i = 0; i < depth; ++i) {
    std::size_t a = i == 0 ? in : width;
    std::size_t b = i + 1 == depth ? out : width;
    layers.emplace_back(ps, name + "." + std::to_string(i), a, b, rng);
  }
}

Tensor MLP::operator()(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i](h);
    if (i + 1 < layers.size()) h = relu(h);
  }
  return h;
}

namespace {

double he(std::size_t fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); }

}  // namespace

UNet1d::UNet1d(ParameterSet& ps, const std::string& name, std::size_t in_channels,
               std::size_t channels, std::size_t out_channels, std::size_t levels_,
               std::size_t kernel_, Rng& rng)
    : levels(levels_), kernel(kernel_) {
  const std::size_t c = channels, k = kernel;
  in_w = ps.create(name + ".in.weight", {c, in_channels, k}, he(in_channels * k), rng);
  in_b = ps.create(name + ".in.bias", {c}, kBiasStd, rng);
  for (std::size_t l = 0; l < levels; ++l) {
    auto n = name + ".down." + std::to_string(l);
    down_w.push_back(ps.create(n + ".weight", {c, c, k}, he(c * k), rng));
    down_b.push_back(ps.create(n + ".bias", {c}, kBiasStd, rng));
  }
  for (std::size_t l = 0; l < levels; ++l) {
    auto n = name + ".up." + std::to_string(l);
    std::size_t cin = l == 0 ? c : 2 * c;
    // Each output of a stride-2 transposed conv sees about k / 2 taps.
    up_w.push_back(ps.create(n + ".weight", {cin, c, k}, he(cin * k / 2), rng));
    up_b.push_back(ps.create(n + ".bias", {c}, kBiasStd, rng));
  }
  std::size_t last = levels == 0 ? c : 2 * c;
  out_w = ps.create(name + ".out.weight", {out_channels, last, 1}, he(last), rng);
  out_b = ps.create(name + ".out.bias", {out_channels}, kBiasStd, rng);
}

Tensor UNet1d::operator()(const Tensor& x) const {
  const std::size_t len = x.dim(1);
  if (len % (std::size_t{1} << levels) != 0) {
    throw ShapeError("unet1d: length " + std::to_string(len) + " is not divisible by 2^" +
                     std::to_string(levels));
  }
  const std::size_t pad = kernel / 2;
  std::vector<Tensor> skips;
  Tensor h = relu(conv1d(x, in_w, in_b, 1, pad));
  for (std::size_t l = 0; l < levels; ++l) {
    skips.push_back(h);
    h = relu(conv1d(h, down_w[l], down_b[l], 2, pad));
  }
  for (std::size_t l = 0; l < levels; ++l) {
    h = relu(conv_transpose1d(h, up_w[l], up_b[l], 2, pad, 1));
    std::vector<Tensor> parts{h, skips[levels - 1 - l]};
    h = concat(parts, 0);
  }
  return conv1d(h, out_w, out_b, 1, 0);
}

UNet2d::UNet2d(ParameterSet& ps, const std::string& name, std::size_t in_channels,
               std::size_t channels, std::size_t out_channels, std::size_t levels_,
               std::size_t kernel_, Rng& rng)
    : levels(levels_), kernel(kernel_) {
  const std::size_t c = channels, k = kernel;
  in_w = ps.create(name + ".in.weight", {c, in_channels, k, k}, he(in_channels * k * k), rng);
  in_b = ps.create(name + ".in.bias", {c}, kBiasStd, rng);
  for (std::size_t l = 0; l < levels; ++l) {
    auto n = name + ".down." + std::to_string(l);
    down_w.push_back(ps.create(n + ".weight", {c, c, k, k}, he(c * k * k), rng));
    down_b.push_back(ps.create(n + ".bias", {c}, kBiasStd, rng));
  }
  for (std::size_t l = 0; l < levels; ++l) {
    auto n = name + ".up." + std::to_string(l);
    std::size_t cin = l == 0 ? c : 2 * c;
    up_w.push_back(ps.create(n + ".weight", {cin, c, k, k}, he(cin * k * k / 4), rng));
    up_b.push_back(ps.create(n + ".bias", {c}, kBiasStd, rng));
  }
  std::size_t last = levels == 0 ? c : 2 * c;
  out_w = ps.create(name + ".out.weight", {out_channels, last, 1, 1}, he(last), rng);
  out_b = ps.create(name + ".out.bias", {out_channels}, kBiasStd, rng);
}

Tensor UNet2d::operator()(const Tensor& x) const {
  const std::size_t len = x.dim(1);
  if (x.dim(2) != len || len % (std::size_t{1} << levels) != 0) {
    throw ShapeError("unet2d: grid " + to_string(x.shape()) + " must be square with sides divisible by 2^" +
                     std::to_string(levels));
  }
  const std::size_t pad = kernel / 2;
  std::vector<Tensor> skips;
  Tensor h = relu(conv2d(x, in_w, in_b, 1, pad));
  for (std::size_t l = 0; l < levels; ++l) {
    skips.push_back(h);
    h = relu(conv2d(h, down_w[l], down_b[l], 2, pad));
  }
  for (std::size_t l = 0; l < levels; ++l) {
    h = relu(conv_transpose2d(h, up_w[l], up_b[l], 2, pad, 1));
    std::vector<Tensor> parts{h, skips[levels - 1 - l]};
    h = concat(parts, 0);
  }
  return conv2d(h, out_w, out_b, 1, 0);
}

double inverse_softplus(double y) {
  if (!(y > 0)) throw ParameterError("inverse_softplus: argument must be positive");
  return y > 30 ? y : std::log(std::expm1(y));
}

}  // namespace nplab
