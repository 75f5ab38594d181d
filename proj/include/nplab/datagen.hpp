#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "nplab/gp_oracle.hpp"
#include "nplab/rng.hpp"

namespace nplab {

/// Context and target sets. Channel 0 for synthetic data; for predator-prey
/// tasks channel 0 is the prey and channel 1 the predator.
struct Task {
  VectorXd x_c, y_c, x_t, y_t;
  std::vector<int> ch_c, ch_t;
  std::string process;     // the process that generated this task (sub-process for mixtures)
  double noise_var = 0.0;  // observation noise used when sampling

  Eigen::Index num_context() const { return x_c.size(); }
  Eigen::Index num_targets() const { return x_t.size(); }
  /// Throws ShapeError on mismatched lengths or non-finite values.
  void validate() const;
};

struct DataProcess {
  enum class Kind { EQ, Matern52, WeaklyPeriodic, Sawtooth, Mixture };
  Kind kind = Kind::EQ;

  static DataProcess parse(const std::string& name);  // eq, matern52, weakly-periodic, sawtooth, mixture
  std::string name() const;
  bool is_gaussian() const;
  /// Kernel of a Gaussian process; throws ParameterError otherwise.
  Kernel kernel() const;
  double noise_var() const;
};

enum class SplitKind { Interpolation, OOID, Extrapolation };

SplitKind parse_split(const std::string& name);  // int, ooid, ext
std::string split_name(SplitKind split);

struct Range {
  double lo, hi;
};
Range context_range(SplitKind split);
Range target_range(SplitKind split);

/// Overrides of the default context/target counts.
struct TaskOptions {
  std::optional<int> min_context;
  std::optional<int> max_context;
  std::optional<int> num_targets;
};

Task sample_task(const DataProcess& proc, SplitKind split, Rng& rng, const TaskOptions& opts = {});

/// (omega * u * x + phi) mod 1, in [0, 1).
double sawtooth_eval(double omega, int u, double phi, double x);

struct LVParams {
  double x0, y0;  // populations at the start of the simulation
  double alpha, beta, gamma, delta;
  double nu = 1.0 / 6.0;
  double sigma;

  static LVParams sample(Rng& rng);
};

struct Trajectory {
  std::vector<double> t, prey, predator;
};

/// Euler-Maruyama integration of the stochastic predator-prey system from t0
/// to t1 with step dt; populations are clamped at 1e-6 after every step.
/// Throws NumericalError naming the step on a non-finite state.
Trajectory lv_integrate(const LVParams& p, double t0, double t1, double dt, Rng& rng);

/// Simulates on [-10, 100] and drops the burn-in before t = 0.
Trajectory lv_simulate(const LVParams& p, double dt, Rng& rng);

enum class LVTaskKind { Interpolation, Forecasting, Reconstruction };
LVTaskKind parse_lv_task(const std::string& name);  // interpolation, forecasting, reconstruction
std::string lv_task_name(LVTaskKind kind);

Task lv_make_tasks(const Trajectory& traj, LVTaskKind kind, Rng& rng);

/// role,channel,x,y rows; context before targets, each sorted by (x, channel, y).
void write_task_csv(std::ostream& os, const Task& task);
Task read_task_csv(std::istream& is);
void write_trajectory_csv(std::ostream& os, const Trajectory& traj);

}  // namespace nplab
