#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "nplab/datagen.hpp"
#include "nplab/gp_oracle.hpp"
#include "nplab/models.hpp"

namespace nplab {

// Metric names used in reports. All KL values are in nats per target.
inline constexpr const char* kKlMetric = "kl_per_target";            // against the diagonal oracle
inline constexpr const char* kKlFullMetric = "kl_full_per_target";   // against the full joint
inline constexpr const char* kLoglikMetric = "loglik_per_target";

struct MetricReport {
  std::string process, split, model, metric;
  double value = 0.0;
  double ci95 = 0.0;  // 1.96 * sample sd / sqrt(n_tasks); 0 when n_tasks < 2
  std::size_t n_tasks = 0;
};

/// Mean and confidence half-width of per-task values.
MetricReport summarise(std::span<const double> per_task, std::string process, std::string split,
                       std::string model, std::string metric);

enum class KlMode { Diagonal, Full };

/// Exact GP posterior at the task's targets for the process that generated
/// it. Throws ParameterError for processes without a Gaussian ground truth.
GaussianJoint oracle_joint(const Task& task);

/// KL(target || prediction) / N. Diagonal mode compares against the oracle's
/// marginals, full mode against the joint. Observation noise is folded into
/// both sides unless `noiseless`. Mean-field predictions are compared as
/// independent Gaussians.
double kl_to_oracle(const GaussianJoint& prediction, const GaussianJoint& oracle, KlMode mode,
                    bool noiseless = false);
double kl_to_oracle(const Prediction& prediction, const GaussianJoint& oracle, KlMode mode,
                    bool noiseless = false);

/// Per-task KL of a model against the oracle. For mean-field models in full
/// mode, also verifies KL(full) >= KL(diagonal) task by task and throws
/// NumericalError if that ever fails.
std::vector<double> kl_per_task(const Model& model, std::span<const Task> tasks, KlMode mode,
                                bool noiseless = false);
MetricReport kl_metric(const Model& model, std::span<const Task> tasks, KlMode mode, std::string split,
                       bool noiseless = false);

MetricReport loglik_metric(const Model& model, std::span<const Task> tasks, std::string split);
/// Exact posterior log-likelihood; the ceiling for any model on GP data.
MetricReport oracle_loglik_metric(std::span<const Task> tasks, std::string split);

/// A single Gaussian fitted to every target value of a corpus.
struct TrivialBaseline {
  double mean = 0.0;
  double std = 1.0;  // floored at 1e-6

  /// Needs at least two target values in total.
  static TrivialBaseline fit(std::span<const Task> tasks);
  MeanFieldPrediction predict(Eigen::Index n) const;
};

/// Loglik report of the baseline fitted on `train` and scored on `test`.
MetricReport trivial_baseline(std::span<const Task> train, std::span<const Task> test, std::string split);
MetricReport trivial_kl_metric(const TrivialBaseline& base, std::span<const Task> tasks, KlMode mode,
                               std::string split, bool noiseless = false);

struct EquivarianceRow {
  double tau = 0.0;
  bool grid_aligned = false;  // tau is a multiple of shift_quantum
  double max_deviation = 0.0; // over means and marginal variances
};

/// Shifts every context and target input by each tau and compares with the
/// unshifted predictions.
std::vector<EquivarianceRow> equivariance_report(const Model& model, std::span<const double> taus,
                                                 std::span<const Task> tasks);

void write_reports_csv(std::ostream& os, const std::vector<MetricReport>& reports);

}  // namespace nplab
