#include "nplab/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

#include "nplab/errors.hpp"

namespace nplab {

namespace {

std::atomic<std::uint64_t> next_node_id{1};
thread_local bool grad_enabled = true;

std::shared_ptr<detail::Node> make_node(Shape shape, std::vector<double> values) {
  if (numel(shape) != values.size()) {
    throw ShapeError("tensor: shape " + to_string(shape) + " holds " +
                     std::to_string(numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  auto node = std::make_shared<detail::Node>();
  node->id = next_node_id.fetch_add(1, std::memory_order_relaxed);
  node->shape = std::move(shape);
  node->value = std::move(values);
  return node;
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(make_node(std::move(shape), std::move(values))) {
  node_->requires_grad = requires_grad;
}

NoGradGuard::NoGradGuard() : previous_(grad_enabled) { grad_enabled = false; }
NoGradGuard::~NoGradGuard() { grad_enabled = previous_; }

Tensor Tensor::zeros(Shape shape) {
  auto n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(Shape shape, double value) {
  auto n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

Tensor Tensor::vector(std::vector<double> values) {
  Shape shape{values.size()};
  return Tensor(std::move(shape), std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor(Shape{rows, cols}, std::move(values));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  return Tensor(std::move(shape), std::move(values), true);
}

Tensor Tensor::from_op(const char* op, Shape shape, std::vector<double> values,
                       std::vector<Tensor> inputs, detail::BackwardFn backward) {
#ifndef NDEBUG
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericalError(std::string(op) + ": non-finite output");
  }
#endif
  auto node = make_node(std::move(shape), std::move(values));
  node->op = op;
  bool any = grad_enabled && std::any_of(inputs.begin(), inputs.end(),
                         [](const Tensor& t) { return t.requires_grad(); });
  if (any) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) node->inputs.push_back(t.node_);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape().size()) {
    throw ShapeError("dim: axis " + std::to_string(axis) + " out of range for shape " +
                     to_string(shape()));
  }
  return shape()[axis];
}

std::size_t Tensor::size() const { return node_->value.size(); }

std::span<const double> Tensor::values() const { return node_->value; }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item: tensor of shape " + to_string(shape()) + " is not a scalar");
  return node_->value[0];
}

std::span<double> Tensor::mutable_values() {
  if (!is_leaf()) throw std::logic_error("mutable_values: tensor is not a leaf");
  return node_->value;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::is_leaf() const { return !node_->backward; }
std::uint64_t Tensor::id() const { return node_->id; }
const char* Tensor::op() const { return node_->op; }

Tensor Tensor::detach() const { return Tensor(shape(), node_->value); }

namespace {

// Nodes reachable from root through nodes that require gradients, ordered by
// increasing id. Creation order is a topological order.
std::vector<detail::Node*> reachable(const Tensor& root) {
  std::vector<detail::Node*> order;
  if (!root.requires_grad()) return order;
  std::unordered_map<detail::Node*, bool> seen;
  std::vector<detail::Node*> stack{root.node().get()};
  seen[root.node().get()] = true;
  while (!stack.empty()) {
    auto* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto& in : n->inputs) {
      if (in->requires_grad && !seen[in.get()]) {
        seen[in.get()] = true;
        stack.push_back(in.get());
      }
    }
  }
  std::sort(order.begin(), order.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->id < b->id; });
  return order;
}

}  // namespace

Graph trace(const Tensor& output) {
  Graph graph;
  for (auto* n : reachable(output)) {
    GraphRecord rec{n->id, n->op, {}};
    for (auto& in : n->inputs) rec.inputs.push_back(in->id);
    graph.push_back(std::move(rec));
  }
  return graph;
}

Tensor Gradients::of(const Tensor& t) const {
  auto it = grads_.find(t.id());
  if (it == grads_.end()) return Tensor::zeros(t.shape());
  return Tensor(t.shape(), it->second);
}

std::span<const double> Gradients::values_of(const Tensor& t) const {
  auto it = grads_.find(t.id());
  if (it == grads_.end()) return {};
  return it->second;
}

Gradients backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + to_string(loss.shape()));
  }
  Gradients result;
  auto order = reachable(loss);
  if (order.empty()) return result;

  std::unordered_map<detail::Node*, std::vector<double>> grads;
  grads[order.back()] = {1.0};
  std::vector<std::vector<double>> grad_in;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    auto g = grads.find(n);
    if (g == grads.end()) continue;
    if (!n->backward) {
      result.grads_[n->id] = std::move(g->second);
      grads.erase(g);
      continue;
    }
    grad_in.assign(n->inputs.size(), {});
    for (std::size_t i = 0; i < n->inputs.size(); ++i) {
      if (n->inputs[i]->requires_grad) grad_in[i].assign(n->inputs[i]->value.size(), 0.0);
    }
    n->backward(g->second, grad_in);
    grads.erase(g);
    for (std::size_t i = 0; i < n->inputs.size(); ++i) {
      if (grad_in[i].empty()) continue;
      auto& acc = grads[n->inputs[i].get()];
      if (acc.empty()) {
        acc = std::move(grad_in[i]);
      } else {
        for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += grad_in[i][k];
      }
    }
  }
  return result;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& theta,
                  double eps) {
  auto values = std::vector<double>(theta.values().begin(), theta.values().end());
  Tensor param = Tensor::parameter(theta.shape(), values);
  auto grads = backward(f(param));
  auto analytic = grads.of(param);

  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto plus = values;
    auto minus = values;
    plus[i] += eps;
    minus[i] -= eps;
    double fp = f(Tensor(theta.shape(), plus)).item();
    double fm = f(Tensor(theta.shape(), minus)).item();
    double fd = (fp - fm) / (2 * eps);
    double a = analytic[i];
    worst = std::max(worst, std::abs(a - fd) / std::max(1.0, std::abs(a)));
  }
  return worst;
}

double grad_check_parameters(const std::function<Tensor()>& loss,
                             std::span<Tensor> parameters, double eps,
                             std::size_t max_coords) {
  auto grads = backward(loss());
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t p = 0; p < parameters.size(); ++p) {
    for (std::size_t i = 0; i < parameters[p].size(); ++i) coords.emplace_back(p, i);
  }
  std::size_t stride = 1;
  if (max_coords > 0 && coords.size() > max_coords) stride = coords.size() / max_coords;

  double worst = 0.0;
  for (std::size_t c = 0; c < coords.size(); c += stride) {
    auto [p, i] = coords[c];
    auto values = parameters[p].mutable_values();
    double original = values[i];
    values[i] = original + eps;
    double fp = loss().item();
    values[i] = original - eps;
    double fm = loss().item();
    values[i] = original;
    double fd = (fp - fm) / (2 * eps);
    auto g = grads.values_of(parameters[p]);
    double a = g.empty() ? 0.0 : g[i];
    worst = std::max(worst, std::abs(a - fd) / std::max(1.0, std::abs(a)));
  }
  return worst;
}

}  // namespace nplab
