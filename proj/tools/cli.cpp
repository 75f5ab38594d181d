#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "nplab/ar.hpp"
#include "nplab/checkpoint.hpp"
#include "nplab/datagen.hpp"
#include "nplab/errors.hpp"
#include "nplab/eval.hpp"
#include "nplab/gp_oracle.hpp"
#include "nplab/models.hpp"
#include "nplab/rng.hpp"
#include "nplab/train.hpp"

namespace nplab::cli {

namespace fs = std::filesystem;

namespace {

// Streams below the root seed. Every random quantity a command uses comes
// from one of these, so it can be regenerated from the seed alone.
enum SeedStream : std::uint64_t {
  kModelInit = 1,
  kTraining = 2,
  kEvalTasks = 3,
  kBaselineFit = 4,
  kSimulation = 5,
  kOracleChecks = 6,
};

const std::vector<std::string> kKeys = {
    // shared
    "model", "process", "split", "metric", "epochs", "seed", "out_dir",
    // training
    "learning_rate", "batch_tasks", "tasks_per_epoch", "crossval_tasks", "max_seconds",
    // model shape
    "width", "encoder_depth", "decoder_depth", "encoding_dim", "unet_channels", "unet_levels", "kernel_size",
    "points_per_unit", "margin", "rank", "kernel_points_per_unit", "kernel_channels", "max_kernel_grid",
    // evaluation
    "checkpoint", "eval_tasks", "kl_mode", "noiseless",
    // oracle
    "perturb", "jacobi_iters", "ar_instances",
    // simulation
    "n", "sigma", "dt",
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create directory '" + dir.string() + "': " + ec.message());
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write '" + path.string() + "'");
  return os;
}

DataProcess trainable_process(const RunConfig& cfg) {
  auto name = cfg.str("process", "eq");
  if (name == "lv") {
    throw ConfigError("process 'lv' is only available to the simulate command");
  }
  return DataProcess::parse(name);
}

ModelConfig model_config(const RunConfig& cfg, std::uint64_t seed) {
  auto c = ModelConfig::defaults(parse_model_kind(cfg.str("model", "convcnp")));
  c.width = cfg.integer("width", c.width);
  c.encoder_depth = cfg.integer("encoder_depth", c.encoder_depth);
  c.decoder_depth = cfg.integer("decoder_depth", c.decoder_depth);
  c.encoding_dim = cfg.integer("encoding_dim", c.encoding_dim);
  c.unet_channels = cfg.integer("unet_channels", c.unet_channels);
  c.unet_levels = cfg.integer("unet_levels", c.unet_levels);
  c.kernel_size = cfg.integer("kernel_size", c.kernel_size);
  c.disc.points_per_unit = cfg.real("points_per_unit", c.disc.points_per_unit);
  c.disc.margin = cfg.real("margin", c.disc.margin);
  c.rank = cfg.integer("rank", c.rank);
  c.kernel_points_per_unit = cfg.real("kernel_points_per_unit", c.kernel_points_per_unit);
  c.kernel_channels = cfg.integer("kernel_channels", c.kernel_channels);
  c.max_kernel_grid = cfg.integer("max_kernel_grid", c.max_kernel_grid);
  c.seed = derive_seed(seed, kModelInit);
  c.validate();
  return c;
}

// Runs a command body and maps library exceptions to exit codes.
template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::invalid_argument& e) {  // ParameterError, ShapeError
    err << "error: " << e.what() << '\n';
    return kConfigError;
  } catch (const ResourceError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  } catch (const NumericalError& e) {
    err << "numerical abort: " << e.what() << '\n';
    return kNumericalAbort;
  }
}

}  // namespace

const std::vector<std::string>& RunConfig::known_keys() { return kKeys; }

void RunConfig::set(const std::string& key, const std::string& value) {
  if (std::find(kKeys.begin(), kKeys.end(), key) == kKeys.end()) {
    throw ConfigError("unknown config key '" + key + "'");
  }
  values_[key] = value;
}

void RunConfig::load_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::string line;
  for (int lineno = 1; std::getline(is, line); ++lineno) {
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    }
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t\r"));
      s.erase(s.find_last_not_of(" \t\r") + 1);
      return s;
    };
    try {
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

std::string RunConfig::str(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double RunConfig::real(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const auto& s = it->second;
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) {
    throw ConfigError("key '" + key + "' expects a number, got '" + s + "'");
  }
  return v;
}

std::uint64_t RunConfig::integer(const std::string& key, std::uint64_t fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const auto& s = it->second;
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw ConfigError("key '" + key + "' expects a non-negative integer, got '" + s + "'");
  }
  return v;
}

bool RunConfig::flag(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (it->second == "1" || it->second == "true") return true;
  if (it->second == "0" || it->second == "false") return false;
  throw ConfigError("key '" + key + "' expects true or false, got '" + it->second + "'");
}

int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto seed = cfg.integer("seed", 0);
    auto proc = trainable_process(cfg);
    auto mc = model_config(cfg, seed);
    TrainConfig tc;
    tc.learning_rate = cfg.real("learning_rate", tc.learning_rate);
    tc.batch_tasks = cfg.integer("batch_tasks", tc.batch_tasks);
    tc.tasks_per_epoch = cfg.integer("tasks_per_epoch", tc.tasks_per_epoch);
    tc.crossval_tasks = cfg.integer("crossval_tasks", tc.crossval_tasks);
    tc.epochs = cfg.integer("epochs", tc.epochs);
    tc.max_seconds = cfg.real("max_seconds", 0.0);
    tc.split = parse_split(cfg.str("split", "int"));
    tc.seed = derive_seed(seed, kTraining);
    tc.validate();

    fs::path dir = cfg.str("out_dir", "out");
    ensure_dir(dir);
    auto model = make_model(mc);
    auto result = train_loop(*model, proc, tc, [&](const EpochRecord& r) {
      out << "epoch=" << r.epoch << " train_loss=" << fmt(r.train_loss) << " cv_score=" << fmt(r.cv_score)
          << std::endl;
    });
    auto ck = result.best;
    ck.metadata["train.process"] = proc.name();
    ck.metadata["train.split"] = split_name(tc.split);
    ck.metadata["train.seed"] = std::to_string(seed);
    save_checkpoint(dir / "best.ckpt", ck);
    auto hist = open_out(dir / "history.csv");
    write_history_csv(hist, result.history);

    out << "command=train model=" << model_kind_name(mc.kind) << " process=" << proc.name()
        << " epochs=" << result.history.size() << " best_epoch=" << result.best_epoch
        << " best_cv_score=" << fmt(result.best_score) << " parameters=" << model->parameters().count()
        << " checkpoint=" << (dir / "best.ckpt").string() << " history=" << (dir / "history.csv").string()
        << '\n';
    return kOk;
  });
}

int cmd_eval(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto seed = cfg.integer("seed", 0);
    fs::path dir = cfg.str("out_dir", "out");
    fs::path ck_path = cfg.str("checkpoint", (dir / "best.ckpt").string());
    if (!fs::exists(ck_path)) throw ConfigError("checkpoint '" + ck_path.string() + "' does not exist");
    auto ck = load_checkpoint(ck_path);
    auto model = model_from_checkpoint(ck);
    const auto kind = model->config().kind;
    if (cfg.has("model") && parse_model_kind(cfg.str("model", "")) != kind) {
      throw ConfigError("checkpoint holds model '" + model_kind_name(kind) + "' but the config declares '" +
                        cfg.str("model", "") + "'");
    }
    auto default_process = ck.metadata.count("train.process") ? ck.metadata.at("train.process") : "eq";
    RunConfig pcfg;
    pcfg.set("process", cfg.str("process", default_process));
    auto proc = trainable_process(pcfg);

    auto metrics = split_list(cfg.str("metric", "kl,loglik"));
    auto splits = split_list(cfg.str("split", "int"));
    for (const auto& m : metrics) {
      if (m != "kl" && m != "loglik") throw ConfigError("unknown metric '" + m + "' (valid: kl, loglik)");
      if (m == "kl" && !proc.is_gaussian()) {
        throw ConfigError("process '" + proc.name() + "' has no Gaussian oracle, so KL is undefined; use "
                          "--metric loglik");
      }
    }
    auto mode_name = cfg.str("kl_mode", "diagonal");
    if (mode_name != "diagonal" && mode_name != "full") {
      throw ConfigError("unknown kl_mode '" + mode_name + "' (valid: diagonal, full)");
    }
    const auto mode = mode_name == "full" ? KlMode::Full : KlMode::Diagonal;
    const bool noiseless = cfg.flag("noiseless", false);
    const std::size_t n_tasks = cfg.integer("eval_tasks", 512);
    if (n_tasks < 2) throw ConfigError("eval_tasks must be at least 2");

    auto fit_tasks =
        make_tasks(proc, SplitKind::Interpolation, n_tasks, derive_seed(seed, kBaselineFit), 0);
    auto baseline = TrivialBaseline::fit(fit_tasks);

    std::vector<MetricReport> reports;
    for (const auto& split_str : splits) {
      auto split = parse_split(split_str);
      auto tasks = make_tasks(proc, split, n_tasks, derive_seed(seed, kEvalTasks),
                              static_cast<std::uint64_t>(split));
      for (const auto& m : metrics) {
        if (m == "kl") {
          reports.push_back(kl_metric(*model, tasks, mode, split_str, noiseless));
          std::vector<double> diag(tasks.size());
          for (std::size_t i = 0; i < tasks.size(); ++i) {
            auto oracle = oracle_joint(tasks[i]);
            diag[i] = kl_to_oracle(embed(diagonal_of(oracle)), oracle, mode, noiseless);
          }
          reports.push_back(summarise(diag, proc.name(), split_str, "diagonal-oracle",
                                      reports.back().metric));
          reports.push_back(trivial_kl_metric(baseline, tasks, mode, split_str, noiseless));
        } else {
          reports.push_back(loglik_metric(*model, tasks, split_str));
          if (proc.is_gaussian()) reports.push_back(oracle_loglik_metric(tasks, split_str));
          reports.push_back(trivial_baseline(fit_tasks, tasks, split_str));
        }
      }
    }
    for (auto& r : reports) r.process = proc.name();

    ensure_dir(dir);
    fs::path csv = dir / "eval.csv";
    auto os = open_out(csv);
    write_reports_csv(os, reports);
    for (const auto& r : reports) {
      out << "process=" << r.process << " split=" << r.split << " model=" << r.model << " metric=" << r.metric
          << " value=" << fmt(r.value) << " ci95=" << fmt(r.ci95) << " n_tasks=" << r.n_tasks << '\n';
    }
    out << "command=eval model=" << model_kind_name(kind) << " process=" << proc.name()
        << " rows=" << reports.size() << " units=nats csv=" << csv.string() << '\n';
    return kOk;
  });
}

int cmd_oracle(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto seed = cfg.integer("seed", 0);
    const double perturb = cfg.real("perturb", 0.0);
    const int iters = static_cast<int>(cfg.integer("jacobi_iters", 500));
    const std::size_t instances = cfg.integer("ar_instances", 100);
    Rng rng = make_rng(seed, kOracleChecks);
    std::normal_distribution<double> normal;
    auto uniform = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
    const auto k = Kernel::eq(0.25);
    const double noise = 0.05;

    int failed = 0, total = 0;
    auto report = [&](const std::string& name, double value, double tolerance, bool pass) {
      ++total;
      if (!pass) ++failed;
      out << "check=" << name << " value=" << fmt(value) << " tolerance=" << fmt(tolerance)
          << " status=" << (pass ? "PASS" : "FAIL") << '\n';
    };

    {
      VectorXd x_c(3), y_c(3), x_t(5);
      x_c << -0.5, 0.1, 0.8;
      y_c << 0.3, -0.2, 1.1;
      x_t << -1.0, -0.2, 0.3, 0.9, 1.5;
      auto p = posterior(k, x_c, y_c, x_t, noise);
      double self = gaussian_kl(p, p);
      report("kl_self", self, 0.0, self == 0.0);
      double diag = kl_to_oracle(embed(diagonal_of(p)), p, KlMode::Diagonal);
      report("kl_diagonal_oracle", diag, 0.0, diag == 0.0);
      double full = kl_to_oracle(embed(diagonal_of(p)), p, KlMode::Full);
      report("kl_full_dependency_gap", full, 0.0, full > 0.0);
    }
    {
      GaussianJoint a{VectorXd::Zero(1), MatrixXd::Constant(1, 1, 1.0), 0.0};
      GaussianJoint b{VectorXd::Zero(1), MatrixXd::Constant(1, 1, 2.0), 0.0};
      const double expected = 0.5 * (0.5 - 1.0 + std::log(2.0));
      double kl = gaussian_kl(a, b);
      report("kl_unit_vs_double_variance", kl, 1e-9, std::abs(kl - expected) <= 1e-9);
    }
    {
      auto map = oracle_map(k, noise);
      if (perturb != 0.0) {
        map = [inner = map, perturb](auto x_c, auto y_c, auto x_t) {
          auto p = inner(x_c, y_c, x_t);
          if (!x_c.empty()) p.var *= 1.0 + perturb;
          return p;
        };
      }
      double worst = 0.0;
      for (std::size_t inst = 0; inst < instances; ++inst) {
        const int n_c = std::uniform_int_distribution<int>(0, 5)(rng);
        VectorXd x_c(n_c), x_t(5);
        for (auto& v : x_c) v = uniform(-2, 2);
        for (auto& v : x_t) v = uniform(-2, 2);
        VectorXd y_c = n_c ? VectorXd(sample_prior(k, x_c, noise, rng)) : VectorXd(0);
        auto joint = posterior(k, x_c, y_c, x_t, noise);
        VectorXd y_t = joint.mean + cholesky_with_jitter(joint.noisy_cov()) * VectorXd::NullaryExpr(5, [&] {
                         return normal(rng);
                       });
        std::vector<std::size_t> order(5);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        double ar = ar_loglik(map, as_span(x_c), as_span(y_c), as_span(x_t), as_span(y_t), order);
        worst = std::max(worst, std::abs(ar - gaussian_logpdf(joint, y_t)));
      }
      report("ar_chain_rule", worst, 1e-8, worst <= 1e-8);
    }
    {
      VectorXd z = VectorXd::LinSpaced(64, -16.0, 15.5);
      std::vector<Eigen::Index> idx(64);
      std::iota(idx.begin(), idx.end(), 0);
      std::shuffle(idx.begin(), idx.end(), rng);
      VectorXd x_c(8), y_c(8);
      for (int i = 0; i < 8; ++i) {
        x_c[i] = z[idx[i]];
        y_c[i] = normal(rng);
      }
      VectorXd x_t = VectorXd::LinSpaced(40, -16.0, 15.5);
      auto res = sparse_mean_jacobi(k, z, x_c, y_c, x_t, iters);
      auto direct = sparse_mean_direct(k, z, x_c, y_c, x_t);
      for (std::size_t r = 0; r < res.residual.size(); ++r) {
        out << "jacobi_iteration=" << r << " residual=" << fmt(res.residual[r]) << " error=" << fmt(res.error[r])
            << '\n';
      }
      bool monotone = true;
      for (std::size_t r = 1; r < res.error.size(); ++r) monotone &= res.error[r] <= res.error[r - 1];
      double gap = (res.mean - direct).cwiseAbs().maxCoeff();
      report("jacobi_spectral_radius", res.spectral_radius, 1.0, res.spectral_radius < 1.0);
      report("jacobi_error_monotone", res.error.back(), 0.0, monotone);
      report("jacobi_vs_direct", gap, 1e-6, gap <= 1e-6);
    }
    out << "command=oracle checks=" << total << " failed=" << failed << '\n';
    return failed ? kOracleFailure : kOk;
  });
}

int cmd_simulate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto seed = cfg.integer("seed", 0);
    const std::size_t n = cfg.integer("n", 4);
    const double dt = cfg.real("dt", 0.01);
    fs::path dir = cfg.str("out_dir", "out");
    if (cfg.has("sigma") && cfg.real("sigma", 0.0) < 0) throw ConfigError("sigma must be non-negative");
    ensure_dir(dir);

    bool positive = true;
    std::size_t files = 0;
    for (std::size_t i = 0; i < n; ++i) {
      Rng rng(derive_seed(seed, kSimulation, i));
      auto params = LVParams::sample(rng);
      if (cfg.has("sigma")) params.sigma = cfg.real("sigma", 0.0);
      auto traj = lv_simulate(params, dt, rng);
      for (std::size_t s = 0; s < traj.t.size(); ++s) {
        positive &= traj.prey[s] > 0 && traj.predator[s] > 0 && std::isfinite(traj.prey[s]) &&
                    std::isfinite(traj.predator[s]);
      }
      char stem[32];
      std::snprintf(stem, sizeof stem, "%03zu", i);
      auto ts = open_out(dir / ("trajectory_" + std::string(stem) + ".csv"));
      write_trajectory_csv(ts, traj);
      ++files;
      for (auto kind : {LVTaskKind::Interpolation, LVTaskKind::Forecasting, LVTaskKind::Reconstruction}) {
        auto task = lv_make_tasks(traj, kind, rng);
        auto os = open_out(dir / ("task_" + std::string(stem) + "_" + lv_task_name(kind) + ".csv"));
        write_task_csv(os, task);
        ++files;
      }
    }
    out << "command=simulate n=" << n << " dt=" << fmt(dt) << " all_positive=" << (positive ? 1 : 0)
        << " files=" << files << " out_dir=" << dir.string() << '\n';
    return kOk;
  });
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Neural process models, Gaussian process oracles and simulators"};
  app.require_subcommand(1);

  struct Flags {
    std::string config, model, process, split, metric, out, checkpoint;
    std::optional<std::uint64_t> epochs, seed, n;
    std::optional<double> perturb, sigma;
    std::vector<std::string> set;
  };
  Flags flags;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", flags.config, "key=value config file; flags override it");
    sub->add_option("--model", flags.model, "cnp, gnp, convcnp, convgnp, fullconvgnp");
    sub->add_option("--process", flags.process, "eq, matern52, weakly-periodic, sawtooth, mixture, lv");
    sub->add_option("--split", flags.split, "int, ooid, ext (comma-separated for eval)");
    sub->add_option("--metric", flags.metric, "kl, loglik (comma-separated)");
    sub->add_option("--epochs", flags.epochs);
    sub->add_option("--seed", flags.seed);
    sub->add_option("--out", flags.out, "output directory");
    sub->add_option("--set", flags.set, "extra key=value settings")->take_all();
  };
  auto* train = app.add_subcommand("train", "train a model and keep the best cross-validated checkpoint");
  auto* eval = app.add_subcommand("eval", "score a checkpoint; writes eval.csv");
  auto* oracle = app.add_subcommand("oracle", "self-test the Gaussian process oracle");
  auto* simulate = app.add_subcommand("simulate", "write predator-prey trajectories and tasks");
  for (auto* sub : {train, eval, oracle, simulate}) add_common(sub);
  eval->add_option("--checkpoint", flags.checkpoint);
  oracle->add_option("--perturb", flags.perturb, "inflate conditional variances to break the chain rule");
  simulate->add_option("-n", flags.n, "number of trajectories");
  simulate->add_option("--sigma", flags.sigma, "override the noise scale of every trajectory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  }

  RunConfig cfg;
  try {
    if (!flags.config.empty()) cfg.load_file(flags.config);
    for (const auto& kv : flags.set) {
      auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    auto put = [&](const char* key, const std::string& v) {
      if (!v.empty()) cfg.set(key, v);
    };
    put("model", flags.model);
    put("process", flags.process);
    put("split", flags.split);
    put("metric", flags.metric);
    put("out_dir", flags.out);
    put("checkpoint", flags.checkpoint);
    if (flags.epochs) cfg.set("epochs", std::to_string(*flags.epochs));
    if (flags.seed) cfg.set("seed", std::to_string(*flags.seed));
    if (flags.n) cfg.set("n", std::to_string(*flags.n));
    if (flags.perturb) cfg.set("perturb", fmt(*flags.perturb));
    if (flags.sigma) cfg.set("sigma", fmt(*flags.sigma));
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  }

  if (train->parsed()) return cmd_train(cfg, out, err);
  if (eval->parsed()) return cmd_eval(cfg, out, err);
  if (oracle->parsed()) return cmd_oracle(cfg, out, err);
  return cmd_simulate(cfg, out, err);
}

}  // namespace nplab::cli
