#include "nplab/eval.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "nplab/errors.hpp"
#include "nplab/parallel.hpp"
#include "nplab/train.hpp"

namespace nplab {

namespace {

double per_target(double total, Eigen::Index n) { return n > 0 ? total / static_cast<double>(n) : 0.0; }

// Tasks of a mixture carry the name of the sub-process that drew them.
std::string corpus_name(std::span<const Task> tasks) {
  if (tasks.empty()) return "";
  for (const auto& t : tasks) {
    if (t.process != tasks.front().process) return "mixture";
  }
  return tasks.front().process;
}

GaussianJoint strip_noise(GaussianJoint g) {
  g.noise_var = 0.0;
  return g;
}

}  // namespace

MetricReport summarise(std::span<const double> per_task, std::string process, std::string split,
                       std::string model, std::string metric) {
  MetricReport r{std::move(process), std::move(split), std::move(model), std::move(metric), 0.0, 0.0,
                 per_task.size()};
  if (per_task.empty()) return r;
  const double n = static_cast<double>(per_task.size());
  r.value = std::accumulate(per_task.begin(), per_task.end(), 0.0) / n;
  if (per_task.size() >= 2) {
    double ss = 0.0;
    for (double v : per_task) ss += (v - r.value) * (v - r.value);
    r.ci95 = 1.96 * std::sqrt(ss / (n - 1)) / std::sqrt(n);
  }
  return r;
}

GaussianJoint oracle_joint(const Task& task) {
  auto proc = DataProcess::parse(task.process);
  if (!proc.is_gaussian()) {
    throw ParameterError("eval: process '" + task.process + "' has no Gaussian oracle");
  }
  return posterior(proc.kernel(), task.x_c, task.y_c, task.x_t, proc.noise_var());
}

double kl_to_oracle(const GaussianJoint& prediction, const GaussianJoint& oracle, KlMode mode, bool noiseless) {
  if (prediction.size() != oracle.size()) {
    throw ShapeError("kl_to_oracle: prediction has " + std::to_string(prediction.size()) +
                     " targets, oracle " + std::to_string(oracle.size()));
  }
  GaussianJoint target = mode == KlMode::Diagonal ? embed(diagonal_of(oracle)) : oracle;
  GaussianJoint pred = prediction;
  if (noiseless) {
    target = strip_noise(std::move(target));
    pred = strip_noise(std::move(pred));
  }
  return per_target(gaussian_kl(target, pred), oracle.size());
}

double kl_to_oracle(const Prediction& prediction, const GaussianJoint& oracle, KlMode mode, bool noiseless) {
  return kl_to_oracle(to_joint(prediction, !noiseless), oracle, mode, noiseless);
}

std::vector<double> kl_per_task(const Model& model, std::span<const Task> tasks, KlMode mode, bool noiseless) {
  std::vector<double> out(tasks.size());
  const bool check = mode == KlMode::Full && is_mean_field(model.config().kind);
  parallel_for(tasks.size(), [&](std::size_t i) {
    NoGradGuard guard;
    auto oracle = oracle_joint(tasks[i]);
    auto pred = to_joint(model.forward(tasks[i]), !noiseless);
    out[i] = kl_to_oracle(pred, oracle, mode, noiseless);
    if (check) {
      double diag = kl_to_oracle(pred, oracle, KlMode::Diagonal, noiseless);
      if (diag > out[i] + 1e-9 * std::max(1.0, std::abs(out[i]))) {
        throw NumericalError("eval: diagonal KL " + std::to_string(diag) + " exceeds full KL " +
                             std::to_string(out[i]) + " on task " + std::to_string(i));
      }
    }
  });
  return out;
}

MetricReport kl_metric(const Model& model, std::span<const Task> tasks, KlMode mode, std::string split,
                       bool noiseless) {
  auto values = kl_per_task(model, tasks, mode, noiseless);
  std::string process = corpus_name(tasks);
  return summarise(values, process, std::move(split), model_kind_name(model.config().kind),
                   mode == KlMode::Diagonal ? kKlMetric : kKlFullMetric);
}

MetricReport loglik_metric(const Model& model, std::span<const Task> tasks, std::string split) {
  auto values = normalised_logliks(model, tasks, 1e-8);
  std::string process = corpus_name(tasks);
  return summarise(values, process, std::move(split), model_kind_name(model.config().kind), kLoglikMetric);
}

MetricReport oracle_loglik_metric(std::span<const Task> tasks, std::string split) {
  std::vector<double> values(tasks.size());
  parallel_for(tasks.size(), [&](std::size_t i) {
    values[i] = per_target(gaussian_logpdf(oracle_joint(tasks[i]), tasks[i].y_t), tasks[i].y_t.size());
  });
  std::string process = corpus_name(tasks);
  return summarise(values, process, std::move(split), "oracle", kLoglikMetric);
}

TrivialBaseline TrivialBaseline::fit(std::span<const Task> tasks) {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto& t : tasks) {
    sum += t.y_t.sum();
    n += static_cast<std::size_t>(t.y_t.size());
  }
  if (n < 2) throw ParameterError("trivial_baseline: need at least 2 target values, got " + std::to_string(n));
  TrivialBaseline b;
  b.mean = sum / static_cast<double>(n);
  for (const auto& t : tasks) sq += (t.y_t.array() - b.mean).square().sum();
  b.std = std::max(1e-6, std::sqrt(sq / static_cast<double>(n)));
  return b;
}

MeanFieldPrediction TrivialBaseline::predict(Eigen::Index n) const {
  return {VectorXd::Constant(n, mean), VectorXd::Constant(n, std * std), 0.0};
}

MetricReport trivial_baseline(std::span<const Task> train, std::span<const Task> test, std::string split) {
  auto base = TrivialBaseline::fit(train);
  std::vector<double> values;
  values.reserve(test.size());
  for (const auto& t : test) {
    values.push_back(per_target(gaussian_logpdf(embed(base.predict(t.y_t.size())), t.y_t), t.y_t.size()));
  }
  std::string process = corpus_name(test);
  return summarise(values, process, std::move(split), "trivial", kLoglikMetric);
}

MetricReport trivial_kl_metric(const TrivialBaseline& base, std::span<const Task> tasks, KlMode mode,
                               std::string split, bool noiseless) {
  std::vector<double> values;
  values.reserve(tasks.size());
  for (const auto& t : tasks) {
    values.push_back(kl_to_oracle(embed(base.predict(t.x_t.size())), oracle_joint(t), mode, noiseless));
  }
  std::string process = corpus_name(tasks);
  return summarise(values, process, std::move(split), "trivial", mode == KlMode::Diagonal ? kKlMetric : kKlFullMetric);
}

std::vector<EquivarianceRow> equivariance_report(const Model& model, std::span<const double> taus,
                                                 std::span<const Task> tasks) {
  const double quantum = shift_quantum(model.config());
  std::vector<EquivarianceRow> rows;
  NoGradGuard guard;
  std::vector<MeanFieldPrediction> base;
  for (const auto& t : tasks) base.push_back(to_mean_field(model.forward(t)));
  for (double tau : taus) {
    EquivarianceRow row;
    row.tau = tau;
    if (quantum > 0) {
      double q = tau / quantum;
      row.grid_aligned = std::abs(q - std::round(q)) < 1e-9;
    }
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      Task shifted = tasks[i];
      shifted.x_c.array() += tau;
      shifted.x_t.array() += tau;
      auto p = to_mean_field(model.forward(shifted));
      if (p.size() == 0) continue;
      double dev = std::max((p.mean - base[i].mean).cwiseAbs().maxCoeff(),
                            (p.var - base[i].var).cwiseAbs().maxCoeff());
      row.max_deviation = std::max(row.max_deviation, dev);
    }
    rows.push_back(row);
  }
  return rows;
}

void write_reports_csv(std::ostream& os, const std::vector<MetricReport>& reports) {
  os << "process,split,model,metric,value,ci95,n_tasks\n";
  char buf[64];
  for (const auto& r : reports) {
    os << r.process << ',' << r.split << ',' << r.model << ',' << r.metric << ',';
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,", r.value, r.ci95);
    os << buf << r.n_tasks << '\n';
  }
}

}  // namespace nplab
