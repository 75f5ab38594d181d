#include "nplab/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <tuple>

#include "nplab/errors.hpp"

namespace nplab {

namespace {

constexpr double kGpNoise = 0.05;

struct Point {
  double x, y;
  int ch;
};

// Sorts points by (x, channel, y) and writes them into the given vectors.
void store_sorted(std::vector<Point> pts, VectorXd& x, VectorXd& y, std::vector<int>& ch) {
  std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) {
    return std::tie(a.x, a.ch, a.y) < std::tie(b.x, b.ch, b.y);
  });
  x.resize(static_cast<Eigen::Index>(pts.size()));
  y.resize(x.size());
  ch.resize(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    x[static_cast<Eigen::Index>(i)] = pts[i].x;
    y[static_cast<Eigen::Index>(i)] = pts[i].y;
    ch[i] = pts[i].ch;
  }
}

VectorXd uniform(Eigen::Index n, Range r, Rng& rng) {
  std::uniform_real_distribution<double> u(r.lo, r.hi);
  VectorXd x(n);
  for (auto& v : x) v = u(rng);
  return x;
}

}  // namespace

void Task::validate() const {
  if (x_c.size() != y_c.size() || static_cast<std::size_t>(x_c.size()) != ch_c.size()) {
    throw ShapeError("task: context lengths differ");
  }
  if (x_t.size() != y_t.size() || static_cast<std::size_t>(x_t.size()) != ch_t.size()) {
    throw ShapeError("task: target lengths differ");
  }
  if (!x_c.allFinite() || !y_c.allFinite() || !x_t.allFinite() || !y_t.allFinite()) {
    throw ShapeError("task: non-finite values");
  }
}

DataProcess DataProcess::parse(const std::string& name) {
  if (name == "eq") return {Kind::EQ};
  if (name == "matern52") return {Kind::Matern52};
  if (name == "weakly-periodic") return {Kind::WeaklyPeriodic};
  if (name == "sawtooth") return {Kind::Sawtooth};
  if (name == "mixture") return {Kind::Mixture};
  throw ParameterError("unknown process '" + name +
                       "' (valid: eq, matern52, weakly-periodic, sawtooth, mixture)");
}

std::string DataProcess::name() const {
  switch (kind) {
    case Kind::EQ: return "eq";
    case Kind::Matern52: return "matern52";
    case Kind::WeaklyPeriodic: return "weakly-periodic";
    case Kind::Sawtooth: return "sawtooth";
    case Kind::Mixture: return "mixture";
  }
  return "?";
}

bool DataProcess::is_gaussian() const {
  return kind == Kind::EQ || kind == Kind::Matern52 || kind == Kind::WeaklyPeriodic;
}

Kernel DataProcess::kernel() const {
  switch (kind) {
    case Kind::EQ: return Kernel::eq(0.25);
    case Kind::Matern52: return Kernel::matern52(0.25);
    case Kind::WeaklyPeriodic: return Kernel::weakly_periodic(0.5, 1.0, 0.25);
    default: throw ParameterError("process '" + name() + "' is not Gaussian");
  }
}

double DataProcess::noise_var() const { return is_gaussian() ? kGpNoise : 0.0; }

SplitKind parse_split(const std::string& name) {
  if (name == "int") return SplitKind::Interpolation;
  if (name == "ooid") return SplitKind::OOID;
  if (name == "ext") return SplitKind::Extrapolation;
  throw ParameterError("unknown split '" + name + "' (valid: int, ooid, ext)");
}

std::string split_name(SplitKind split) {
  switch (split) {
    case SplitKind::Interpolation: return "int";
    case SplitKind::OOID: return "ooid";
    case SplitKind::Extrapolation: return "ext";
  }
  return "?";
}

Range context_range(SplitKind split) {
  return split == SplitKind::OOID ? Range{2, 6} : Range{-2, 2};
}

Range target_range(SplitKind split) {
  return split == SplitKind::Interpolation ? Range{-2, 2} : Range{2, 6};
}

double sawtooth_eval(double omega, int u, double phi, double x) {
  double v = omega * u * x + phi;
  double r = v - std::floor(v);
  return r >= 1.0 ? 0.0 : r;
}

Task sample_task(const DataProcess& proc, SplitKind split, Rng& rng, const TaskOptions& opts) {
  DataProcess sub = proc;
  if (proc.kind == DataProcess::Kind::Mixture) {
    std::uniform_int_distribution<int> pick(0, 3);
    sub.kind = static_cast<DataProcess::Kind>(pick(rng));
  }
  bool gp_sizes = proc.is_gaussian();
  int lo = opts.min_context.value_or(0);
  int hi = opts.max_context.value_or(gp_sizes ? 30 : 75);
  int n_t = opts.num_targets.value_or(gp_sizes ? 50 : 100);
  if (lo < 0 || hi < lo || n_t < 1) throw ParameterError("sample_task: invalid context/target counts");
  int n_c = std::uniform_int_distribution<int>(lo, hi)(rng);

  VectorXd x_c = uniform(n_c, context_range(split), rng);
  VectorXd x_t = uniform(n_t, target_range(split), rng);
  VectorXd y_c(n_c), y_t(n_t);

  Task task;
  task.process = sub.name();
  task.noise_var = sub.noise_var();
  if (sub.is_gaussian()) {
    VectorXd x(n_c + n_t);
    x << x_c, x_t;
    VectorXd y = sample_prior(sub.kernel(), x, task.noise_var, rng);
    y_c = y.head(n_c);
    y_t = y.tail(n_t);
  } else {
    double omega = std::uniform_real_distribution<double>(2.0, 4.0)(rng);
    int u = std::bernoulli_distribution(0.5)(rng) ? 1 : -1;
    double phi = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    for (Eigen::Index i = 0; i < n_c; ++i) y_c[i] = sawtooth_eval(omega, u, phi, x_c[i]);
    for (Eigen::Index i = 0; i < n_t; ++i) y_t[i] = sawtooth_eval(omega, u, phi, x_t[i]);
  }

  std::vector<Point> c, t;
  for (Eigen::Index i = 0; i < n_c; ++i) c.push_back({x_c[i], y_c[i], 0});
  for (Eigen::Index i = 0; i < n_t; ++i) t.push_back({x_t[i], y_t[i], 0});
  store_sorted(std::move(c), task.x_c, task.y_c, task.ch_c);
  store_sorted(std::move(t), task.x_t, task.y_t, task.ch_t);
  return task;
}

LVParams LVParams::sample(Rng& rng) {
  auto u = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
  LVParams p;
  p.x0 = u(5, 100);
  p.y0 = u(5, 100);
  p.alpha = u(0.2, 0.8);
  p.beta = u(0.04, 0.08);
  p.gamma = u(0.8, 1.2);
  p.delta = u(0.04, 0.08);
  p.nu = 1.0 / 6.0;
  p.sigma = u(0.5, 10);
  return p;
}

Trajectory lv_integrate(const LVParams& p, double t0, double t1, double dt, Rng& rng) {
  if (!(dt > 0) || !(t1 > t0)) throw ParameterError("lv_integrate: need dt > 0 and t1 > t0");
  const auto steps = static_cast<std::size_t>(std::llround((t1 - t0) / dt));
  Trajectory traj;
  traj.t.reserve(steps + 1);
  traj.prey.reserve(steps + 1);
  traj.predator.reserve(steps + 1);
  double x = p.x0, y = p.y0;
  traj.t.push_back(t0);
  traj.prey.push_back(x);
  traj.predator.push_back(y);
  std::normal_distribution<double> normal;
  const double sq = std::sqrt(dt);
  for (std::size_t n = 1; n <= steps; ++n) {
    double dw1 = sq * normal(rng);
    double dw2 = sq * normal(rng);
    double nx = x + (p.alpha * x - p.beta * y * x) * dt + p.sigma * std::pow(x, p.nu) * dw1;
    double ny = y + (-p.gamma * y + p.delta * y * x) * dt + p.sigma * std::pow(y, p.nu) * dw2;
    if (!std::isfinite(nx) || !std::isfinite(ny)) {
      throw NumericalError("lv_integrate: non-finite state at step " + std::to_string(n));
    }
    x = std::max(nx, 1e-6);
    y = std::max(ny, 1e-6);
    traj.t.push_back(t0 + static_cast<double>(n) * dt);
    traj.prey.push_back(x);
    traj.predator.push_back(y);
  }
  return traj;
}

Trajectory lv_simulate(const LVParams& p, double dt, Rng& rng) {
  auto full = lv_integrate(p, -10.0, 100.0, dt, rng);
  const auto burn = static_cast<std::size_t>(std::llround(10.0 / dt));
  Trajectory out;
  for (std::size_t i = burn; i < full.t.size(); ++i) {
    out.t.push_back(static_cast<double>(i - burn) * dt);
    out.prey.push_back(full.prey[i]);
    out.predator.push_back(full.predator[i]);
  }
  return out;
}

LVTaskKind parse_lv_task(const std::string& name) {
  if (name == "interpolation") return LVTaskKind::Interpolation;
  if (name == "forecasting") return LVTaskKind::Forecasting;
  if (name == "reconstruction") return LVTaskKind::Reconstruction;
  throw ParameterError("unknown predator-prey task '" + name +
                       "' (valid: interpolation, forecasting, reconstruction)");
}

std::string lv_task_name(LVTaskKind kind) {
  switch (kind) {
    case LVTaskKind::Interpolation: return "interpolation";
    case LVTaskKind::Forecasting: return "forecasting";
    case LVTaskKind::Reconstruction: return "reconstruction";
  }
  return "?";
}

Task lv_make_tasks(const Trajectory& traj, LVTaskKind kind, Rng& rng) {
  if (traj.t.size() < 250 || traj.t.front() > 1e-9 || traj.t.back() < 100.0 - 1e-9) {
    throw ParameterError("lv_make_tasks: trajectory must cover [0, 100] with at least 250 points");
  }
  // Each species is observed at its own random subset of the simulation times.
  std::vector<std::vector<Point>> obs(2);
  for (int s = 0; s < 2; ++s) {
    int n = std::uniform_int_distribution<int>(150, 250)(rng);
    std::vector<std::size_t> idx(traj.t.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<std::size_t> pick;
    std::sample(idx.begin(), idx.end(), std::back_inserter(pick), n, rng);
    const auto& values = s == 0 ? traj.prey : traj.predator;
    for (auto i : pick) obs[s].push_back({traj.t[i], values[i], s});
  }

  std::vector<Point> c, t;
  auto forecast = [&](const std::vector<Point>& pts, double cut) {
    for (const auto& p : pts) (p.x < cut ? c : t).push_back(p);
  };
  switch (kind) {
    case LVTaskKind::Interpolation:
      for (auto& pts : obs) {
        std::shuffle(pts.begin(), pts.end(), rng);
        t.insert(t.end(), pts.begin(), pts.begin() + 100);
        c.insert(c.end(), pts.begin() + 100, pts.end());
      }
      break;
    case LVTaskKind::Forecasting: {
      double cut = std::uniform_real_distribution<double>(25, 75)(rng);
      for (auto& pts : obs) forecast(pts, cut);
      break;
    }
    case LVTaskKind::Reconstruction: {
      int s = std::bernoulli_distribution(0.5)(rng) ? 1 : 0;
      double cut = std::uniform_real_distribution<double>(25, 75)(rng);
      forecast(obs[s], cut);
      c.insert(c.end(), obs[1 - s].begin(), obs[1 - s].end());
      break;
    }
  }
  if (t.empty()) throw ParameterError("lv_make_tasks: no target points");
  Task task;
  task.process = "lv";
  store_sorted(std::move(c), task.x_c, task.y_c, task.ch_c);
  store_sorted(std::move(t), task.x_t, task.y_t, task.ch_t);
  return task;
}

void write_task_csv(std::ostream& os, const Task& task) {
  std::vector<Point> c, t;
  for (Eigen::Index i = 0; i < task.x_c.size(); ++i) c.push_back({task.x_c[i], task.y_c[i], task.ch_c[static_cast<std::size_t>(i)]});
  for (Eigen::Index i = 0; i < task.x_t.size(); ++i) t.push_back({task.x_t[i], task.y_t[i], task.ch_t[static_cast<std::size_t>(i)]});
  auto order = [](std::vector<Point>& pts) {
    std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) {
      return std::tie(a.x, a.ch, a.y) < std::tie(b.x, b.ch, b.y);
    });
  };
  order(c);
  order(t);
  os << "role,channel,x,y\n";
  char buf[96];
  for (const auto& p : c) {
    std::snprintf(buf, sizeof buf, "c,%d,%.17g,%.17g\n", p.ch, p.x, p.y);
    os << buf;
  }
  for (const auto& p : t) {
    std::snprintf(buf, sizeof buf, "t,%d,%.17g,%.17g\n", p.ch, p.x, p.y);
    os << buf;
  }
}

Task read_task_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "role,channel,x,y") {
    throw ParameterError("task csv: missing header 'role,channel,x,y'");
  }
  std::vector<Point> c, t;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string role, ch, x, y;
    if (!std::getline(ls, role, ',') || !std::getline(ls, ch, ',') || !std::getline(ls, x, ',') ||
        !std::getline(ls, y)) {
      throw ParameterError("task csv: malformed line " + std::to_string(lineno));
    }
    Point p{std::strtod(x.c_str(), nullptr), std::strtod(y.c_str(), nullptr), std::stoi(ch)};
    if (role == "c") c.push_back(p);
    else if (role == "t") t.push_back(p);
    else throw ParameterError("task csv: unknown role on line " + std::to_string(lineno));
  }
  Task task;
  store_sorted(std::move(c), task.x_c, task.y_c, task.ch_c);
  store_sorted(std::move(t), task.x_t, task.y_t, task.ch_t);
  return task;
}

void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  os << "t,prey,predator\n";
  char buf[96];
  for (std::size_t i = 0; i < traj.t.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", traj.t[i], traj.prey[i], traj.predator[i]);
    os << buf;
  }
}

}  // namespace nplab
