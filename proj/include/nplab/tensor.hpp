#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace nplab {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

// Accumulates gradients into the inputs given the gradient of the output.
// grad_in[i] is empty when input i does not require a gradient.
using BackwardFn = std::function<void(std::span<const double> grad_out,
                                      std::span<std::vector<double>> grad_in)>;

struct Node {
  std::uint64_t id = 0;
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
};

}  // namespace detail

/// Dense row-major tensor of doubles that optionally records the operation
/// that produced it. Copies share the underlying node.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  /// A leaf that requires a gradient.
  static Tensor parameter(Shape shape, std::vector<double> values);

  // Builds the result of an operation. The graph record is only kept when
  // at least one input requires a gradient.
  static Tensor from_op(const char* op, Shape shape, std::vector<double> values,
                        std::vector<Tensor> inputs, detail::BackwardFn backward);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;
  std::span<const double> values() const;
  double item() const;
  double operator[](std::size_t i) const { return values()[i]; }

  /// Writable storage; only permitted on leaves (parameters and constants).
  std::span<double> mutable_values();

  bool requires_grad() const;
  bool is_leaf() const;
  std::uint64_t id() const;
  const char* op() const;
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// While alive, operations on this thread record no graph, as if no input
/// required a gradient. Used for evaluation-only forward passes.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// One operation in a recorded graph.
struct GraphRecord {
  std::uint64_t id;
  const char* op;
  std::vector<std::uint64_t> inputs;
};

/// Topologically ordered records reachable from an output; ids increase.
using Graph = std::vector<GraphRecord>;

Graph trace(const Tensor& output);

/// Result of a backward pass, keyed by tensor id.
class Gradients {
 public:
  /// Gradient with respect to t; zeros when t was not reachable.
  Tensor of(const Tensor& t) const;
  bool contains(const Tensor& t) const { return grads_.count(t.id()) != 0; }
  std::span<const double> values_of(const Tensor& t) const;

 private:
  friend Gradients backward(const Tensor& loss);
  std::unordered_map<std::uint64_t, std::vector<double>> grads_;
};

/// Reverse-mode sweep from a scalar loss. Throws ShapeError for non-scalar
/// losses.
Gradients backward(const Tensor& loss);

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
/// for a scalar function of a single tensor.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& theta,
                  double eps = 1e-5);

/// Same measure over a set of parameter tensors; the parameters are perturbed
/// in place and restored. max_coords > 0 subsamples coordinates evenly.
double grad_check_parameters(const std::function<Tensor()>& loss,
                             std::span<Tensor> parameters, double eps = 1e-5,
                             std::size_t max_coords = 0);

}  // namespace nplab
