#pragma once

#include <functional>
#include <limits>
#include <iosfwd>
#include <span>
#include <vector>

#include "nplab/checkpoint.hpp"
#include "nplab/datagen.hpp"
#include "nplab/models.hpp"

namespace nplab {

struct TrainConfig {
  double learning_rate = 3e-4;
  std::size_t batch_tasks = 16;
  std::size_t tasks_per_epoch = 1024;
  std::size_t epochs = 10;
  std::size_t crossval_tasks = 512;
  std::uint64_t seed = 0;
  SplitKind split = SplitKind::Interpolation;
  TaskOptions task_options;
  // Diagonal jitter on Gaussian-family covariances: warm-up value for the
  // first epoch, then the steady value.
  double warmup_jitter = 1e-4;
  double jitter = 1e-8;
  // Stop after the epoch during which this many seconds elapsed; 0 disables.
  // Runs that hit the limit are not reproducible.
  double max_seconds = 0.0;

  void validate() const;
};

/// Adam with bias correction over a fixed list of parameter tensors.
class Adam {
 public:
  Adam(std::vector<Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  /// grads[i] matches params[i] in size; an empty entry counts as zero.
  void step(const std::vector<std::vector<double>>& grads);

  std::size_t steps() const { return t_; }
  const std::vector<std::vector<double>>& first_moment() const { return m_; }
  const std::vector<std::vector<double>>& second_moment() const { return v_; }

 private:
  std::vector<Tensor> params_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// -(1/M) sum_m loglik_m / N_t,m over the batch; differentiable.
Tensor np_objective(const Model& model, std::span<const Task> batch, double jitter = 0.0);

/// mean - 1.96 * sd / sqrt(n) with the sample standard deviation; n >= 2.
double crossval_score(std::span<const double> logliks);

/// Per-task log-likelihood divided by the number of targets, without graph.
std::vector<double> normalised_logliks(const Model& model, std::span<const Task> tasks, double jitter = 0.0);

/// Tasks drawn from independent streams derived from (seed, stream, index).
std::vector<Task> make_tasks(const DataProcess& proc, SplitKind split, std::size_t n, std::uint64_t seed,
                             std::uint64_t stream, const TaskOptions& opts = {});

struct EpochRecord {
  std::size_t epoch;
  double train_loss;
  double cv_score;
};

struct TrainResult {
  Checkpoint best;
  double best_score = -std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::vector<EpochRecord> history;
};

/// Trains in place and finally loads the best cross-validated parameters into
/// the model. Throws NumericalError naming the epoch and batch on a
/// non-finite loss.
TrainResult train_loop(Model& model, const DataProcess& proc, const TrainConfig& cfg,
                       const std::function<void(const EpochRecord&)>& on_epoch = {});

void write_history_csv(std::ostream& os, const std::vector<EpochRecord>& history);

}  // namespace nplab
