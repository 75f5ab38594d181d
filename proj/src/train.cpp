#include "nplab/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "nplab/errors.hpp"
#include "nplab/ops.hpp"
#include "nplab/parallel.hpp"
#include "nplab/rng.hpp"

namespace nplab {

namespace {

// Seed streams below the root training seed.
constexpr std::uint64_t kTrainStream = 1;
constexpr std::uint64_t kCrossvalStream = 2;

double loglik_jitter(const Model& model, double jitter) {
  return is_mean_field(model.config().kind) ? 0.0 : jitter;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) {
    throw ParameterError("train: learning_rate must be positive");
  }
  if (batch_tasks == 0 || tasks_per_epoch == 0) {
    throw ParameterError("train: batch_tasks and tasks_per_epoch must be positive");
  }
  if (crossval_tasks < 2) throw ParameterError("train: crossval_tasks must be at least 2");
  if (warmup_jitter < 0 || jitter < 0) throw ParameterError("train: jitter must be non-negative");
  if (max_seconds < 0) throw ParameterError("train: max_seconds must be non-negative");
}

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step(const std::vector<std::vector<double>>& grads) {
  if (grads.size() != params_.size()) {
    throw ShapeError("adam: got " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params_.size()) + " parameters");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t p = 0; p < params_.size(); ++p) {
    auto values = params_[p].mutable_values();
    const auto& g = grads[p];
    if (!g.empty() && g.size() != values.size()) {
      throw ShapeError("adam: gradient size mismatch for parameter " + std::to_string(p));
    }
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < values.size(); ++i) {
      double gi = g.empty() ? 0.0 : g[i];
      m[i] = beta1_ * m[i] + (1 - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1 - beta2_) * gi * gi;
      values[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

Tensor np_objective(const Model& model, std::span<const Task> batch, double jitter) {
  if (batch.empty()) throw ShapeError("np_objective: empty batch");
  const double j = loglik_jitter(model, jitter);
  Tensor total;
  for (const auto& task : batch) {
    auto pred = model.forward(task);
    auto term = scale(predict_loglik(pred, as_span(task.y_t), j),
                      1.0 / static_cast<double>(std::max<std::size_t>(1, task.y_t.size())));
    total = total.defined() ? add(total, term) : term;
  }
  return scale(total, -1.0 / static_cast<double>(batch.size()));
}

double crossval_score(std::span<const double> logliks) {
  const std::size_t n = logliks.size();
  if (n < 2) throw ParameterError("crossval_score: need at least 2 values, got " + std::to_string(n));
  double mean = std::accumulate(logliks.begin(), logliks.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : logliks) ss += (v - mean) * (v - mean);
  double sd = std::sqrt(ss / (n - 1));
  return mean - 1.96 * sd / std::sqrt(static_cast<double>(n));
}

std::vector<double> normalised_logliks(const Model& model, std::span<const Task> tasks, double jitter) {
  std::vector<double> out(tasks.size());
  const double j = loglik_jitter(model, jitter);
  parallel_for(tasks.size(), [&](std::size_t i) {
    NoGradGuard guard;
    const auto& task = tasks[i];
    double ll = predict_loglik(model.forward(task), as_span(task.y_t), j).item();
    out[i] = ll / static_cast<double>(std::max<Eigen::Index>(1, task.y_t.size()));
  });
  return out;
}

std::vector<Task> make_tasks(const DataProcess& proc, SplitKind split, std::size_t n, std::uint64_t seed,
                             std::uint64_t stream, const TaskOptions& opts) {
  std::vector<Task> tasks;
  tasks.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, stream, i));
    tasks.push_back(sample_task(proc, split, rng, opts));
  }
  return tasks;
}

TrainResult train_loop(Model& model, const DataProcess& proc, const TrainConfig& cfg,
                       const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  TrainResult result;
  result.best = model.to_checkpoint();
  if (cfg.epochs == 0) return result;

  const auto start = std::chrono::steady_clock::now();
  auto params = model.parameters().tensors();
  Adam adam(params, cfg.learning_rate);
  const auto cv_tasks = make_tasks(proc, cfg.split, cfg.crossval_tasks, cfg.seed, kCrossvalStream, cfg.task_options);
  const std::size_t batches = (cfg.tasks_per_epoch + cfg.batch_tasks - 1) / cfg.batch_tasks;

  std::vector<std::vector<std::vector<double>>> task_grads;
  std::vector<double> task_loss;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double jitter = epoch == 1 ? cfg.warmup_jitter : cfg.jitter;
    const std::uint64_t epoch_seed = derive_seed(cfg.seed, kTrainStream, epoch);
    double loss_sum = 0.0;
    std::size_t done = 0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t m = std::min(cfg.batch_tasks, cfg.tasks_per_epoch - b * cfg.batch_tasks);
      std::vector<Task> batch;
      batch.reserve(m);
      for (std::size_t i = 0; i < m; ++i) {
        Rng rng(derive_seed(epoch_seed, b * cfg.batch_tasks + i));
        batch.push_back(sample_task(proc, cfg.split, rng, cfg.task_options));
      }

      // Per-task gradients are stored by task index and reduced in that
      // order, so the result does not depend on the thread count.
      task_grads.assign(m, {});
      task_loss.assign(m, 0.0);
      try {
        parallel_for(m, [&](std::size_t i) {
          auto loss = np_objective(model, std::span<const Task>(&batch[i], 1), jitter);
          task_loss[i] = loss.item();
          if (!std::isfinite(task_loss[i])) return;
          auto grads = backward(loss);
          auto& out = task_grads[i];
          out.resize(params.size());
          for (std::size_t p = 0; p < params.size(); ++p) {
            auto g = grads.values_of(params[p]);
            out[p].assign(g.begin(), g.end());
          }
        });
      } catch (const NumericalError& e) {
        throw NumericalError("train: epoch " + std::to_string(epoch) + " batch " + std::to_string(b) + ": " +
                             e.what());
      }
      double batch_loss = 0.0;
      for (double l : task_loss) batch_loss += l;
      batch_loss /= static_cast<double>(m);
      if (!std::isfinite(batch_loss)) {
        throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                             std::to_string(b));
      }

      std::vector<std::vector<double>> grads(params.size());
      for (std::size_t p = 0; p < params.size(); ++p) {
        grads[p].assign(params[p].size(), 0.0);
        for (std::size_t i = 0; i < m; ++i) {
          const auto& g = task_grads[i][p];
          for (std::size_t k = 0; k < g.size(); ++k) grads[p][k] += g[k];
        }
        for (auto& v : grads[p]) v /= static_cast<double>(m);
      }
      adam.step(grads);
      loss_sum += batch_loss * static_cast<double>(m);
      done += m;
    }

    auto cv = normalised_logliks(model, cv_tasks, cfg.jitter);
    EpochRecord rec{epoch, loss_sum / static_cast<double>(done), crossval_score(cv)};
    if (!std::isfinite(rec.cv_score)) {
      throw NumericalError("train: non-finite cross-validation score at epoch " + std::to_string(epoch));
    }
    result.history.push_back(rec);
    if (rec.cv_score > result.best_score) {
      result.best_score = rec.cv_score;
      result.best_epoch = epoch;
      result.best = model.to_checkpoint();
    }
    if (on_epoch) on_epoch(rec);

    double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (cfg.max_seconds > 0 && elapsed >= cfg.max_seconds) break;
  }
  model.load(result.best);
  return result;
}

void write_history_csv(std::ostream& os, const std::vector<EpochRecord>& history) {
  os << "epoch,train_loss,cv_score\n";
  char buf[96];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", r.epoch, r.train_loss, r.cv_score);
    os << buf;
  }
}

}  // namespace nplab
