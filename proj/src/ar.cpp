#include "nplab/ar.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "nplab/errors.hpp"

namespace nplab {

namespace {

double normal_logpdf(double y, double mean, double var) {
  double r = y - mean;
  return -0.5 * (std::log(2 * std::numbers::pi * var) + r * r / var);
}

}  // namespace

PredictionMap model_map(const Model& model) {
  if (!is_mean_field(model.config().kind)) {
    throw ParameterError("model_map: " + model_kind_name(model.config().kind) +
                         " is not a mean-field model");
  }
  return [&model](std::span<const double> x_c, std::span<const double> y_c, std::span<const double> x_t) {
    NoGradGuard guard;
    return to_mean_field(model.forward(x_c, y_c, x_t));
  };
}

PredictionMap oracle_map(const Kernel& k, double noise_var) {
  return [k, noise_var](std::span<const double> x_c, std::span<const double> y_c,
                        std::span<const double> x_t) {
    auto map = [](std::span<const double> s) {
      return Eigen::Map<const VectorXd>(s.data(), static_cast<Eigen::Index>(s.size()));
    };
    return diagonal_of(posterior(k, map(x_c), map(y_c), map(x_t), noise_var));
  };
}

VectorXd ar_sample(const PredictionMap& map, std::span<const double> x_c,
                   std::span<const double> y_c, std::span<const double> x_t, Rng& rng) {
  std::vector<std::size_t> order(x_t.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<double> xs(x_c.begin(), x_c.end()), ys(y_c.begin(), y_c.end());
  std::normal_distribution<double> normal;
  VectorXd out(static_cast<Eigen::Index>(x_t.size()));
  for (auto n : order) {
    auto pred = map(xs, ys, x_t.subspan(n, 1));
    double y = pred.mean[0] + std::sqrt(pred.var[0] + pred.noise_var) * normal(rng);
    out[static_cast<Eigen::Index>(n)] = y;
    xs.push_back(x_t[n]);
    ys.push_back(y);
  }
  return out;
}

double ar_loglik(const PredictionMap& map, std::span<const double> x_c, std::span<const double> y_c,
                 std::span<const double> x_t, std::span<const double> y_t,
                 const std::vector<std::size_t>& ordering) {
  if (x_t.size() != y_t.size() || ordering.size() != x_t.size()) {
    throw ShapeError("ar_loglik: target and ordering lengths differ");
  }
  std::vector<char> seen(ordering.size(), 0);
  for (auto i : ordering) {
    if (i >= ordering.size() || seen[i]) throw ShapeError("ar_loglik: ordering is not a permutation");
    seen[i] = 1;
  }
  std::vector<double> xs(x_c.begin(), x_c.end()), ys(y_c.begin(), y_c.end());
  double total = 0.0;
  for (auto n : ordering) {
    auto pred = map(xs, ys, x_t.subspan(n, 1));
    total += normal_logpdf(y_t[n], pred.mean[0], pred.var[0] + pred.noise_var);
    xs.push_back(x_t[n]);
    ys.push_back(y_t[n]);
  }
  return total;
}

double independent_loglik(const PredictionMap& map, std::span<const double> x_c,
                          std::span<const double> y_c, std::span<const double> x_t,
                          std::span<const double> y_t) {
  if (x_t.size() != y_t.size()) throw ShapeError("independent_loglik: target lengths differ");
  auto pred = map(x_c, y_c, x_t);
  double total = 0.0;
  for (std::size_t n = 0; n < x_t.size(); ++n) {
    auto i = static_cast<Eigen::Index>(n);
    total += normal_logpdf(y_t[n], pred.mean[i], pred.var[i] + pred.noise_var);
  }
  return total;
}

VectorXd recover_smooth(const PredictionMap& map, std::span<const double> x_sample,
                        std::span<const double> y_sample, std::span<const double> x_query) {
  return map(x_sample, y_sample, x_query).mean;
}

}  // namespace nplab
