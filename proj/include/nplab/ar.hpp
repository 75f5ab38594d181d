#pragma once

#include <functional>
#include <span>
#include <vector>

#include "nplab/gp_oracle.hpp"
#include "nplab/models.hpp"

namespace nplab {

/// A mean-field prediction map: (context inputs, context outputs, targets) to
/// marginals at the targets.
using PredictionMap = std::function<MeanFieldPrediction(
    std::span<const double> x_c, std::span<const double> y_c, std::span<const double> x_t)>;

/// Wraps a mean-field model (CNP or ConvCNP); forward passes record no graph.
/// Throws ParameterError for the Gaussian family.
PredictionMap model_map(const Model& model);

/// Marginals of the exact GP posterior with observation noise `noise_var`.
PredictionMap oracle_map(const Kernel& k, double noise_var);

/// One autoregressive draw at x_t: targets are visited in a fresh uniformly
/// random order, each noisy sample is appended to the context before the next
/// step. The result is in the order of x_t. Makes exactly |x_t| map calls.
VectorXd ar_sample(const PredictionMap& map, std::span<const double> x_c,
                   std::span<const double> y_c, std::span<const double> x_t, Rng& rng);

/// Sum over the ordering of log q(y_n | x_n, context plus earlier targets).
/// `ordering` must be a permutation of 0..N-1.
double ar_loglik(const PredictionMap& map, std::span<const double> x_c, std::span<const double> y_c,
                 std::span<const double> x_t, std::span<const double> y_t,
                 const std::vector<std::size_t>& ordering);

/// Sum of independent marginal log-densities (no feedback).
double independent_loglik(const PredictionMap& map, std::span<const double> x_c,
                          std::span<const double> y_c, std::span<const double> x_t,
                          std::span<const double> y_t);

/// Mean of the map at x_query with the (noisy) sample as context.
VectorXd recover_smooth(const PredictionMap& map, std::span<const double> x_sample,
                        std::span<const double> y_sample, std::span<const double> x_query);

}  // namespace nplab
