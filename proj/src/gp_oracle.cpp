#include "nplab/gp_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "nplab/errors.hpp"

namespace nplab {

namespace {

void require_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw ParameterError(std::string("kernel: ") + what + " must be positive, got " +
                         std::to_string(v));
  }
}

double log_det_from_cholesky(const MatrixXd& l) { return 2.0 * l.diagonal().array().log().sum(); }

}  // namespace

Kernel Kernel::eq(double length_scale) {
  require_positive(length_scale, "length scale");
  Kernel k;
  k.kind = Kind::EQ;
  k.length_scale = length_scale;
  return k;
}

Kernel Kernel::matern52(double length_scale) {
  require_positive(length_scale, "length scale");
  Kernel k;
  k.kind = Kind::Matern52;
  k.length_scale = length_scale;
  return k;
}

Kernel Kernel::weakly_periodic(double ld, double lp, double period) {
  require_positive(ld, "decay length scale");
  require_positive(lp, "periodic length scale");
  require_positive(period, "period");
  Kernel k;
  k.kind = Kind::WeaklyPeriodic;
  k.ld = ld;
  k.lp = lp;
  k.period = period;
  return k;
}

double Kernel::operator()(double x, double y) const {
  double d = x - y;
  switch (kind) {
    case Kind::EQ:
      return std::exp(-0.5 * d * d / (length_scale * length_scale));
    case Kind::Matern52: {
      double r = std::sqrt(5.0) * std::abs(d) / length_scale;
      return (1.0 + r + r * r / 3.0) * std::exp(-r);
    }
    case Kind::WeaklyPeriodic: {
      double s = std::sin(std::numbers::pi * d / period);
      return std::exp(-0.5 * d * d / (ld * ld) - 2.0 * s * s / (lp * lp));
    }
  }
  return 0.0;
}

std::string Kernel::name() const {
  switch (kind) {
    case Kind::EQ: return "eq";
    case Kind::Matern52: return "matern52";
    case Kind::WeaklyPeriodic: return "weakly-periodic";
  }
  return "?";
}

MatrixXd kernel_eval(const Kernel& k, const VectorXd& x, const VectorXd& y) {
  switch (k.kind) {
    case Kernel::Kind::EQ:
    case Kernel::Kind::Matern52: require_positive(k.length_scale, "length scale"); break;
    case Kernel::Kind::WeaklyPeriodic:
      require_positive(k.ld, "decay length scale");
      require_positive(k.lp, "periodic length scale");
      require_positive(k.period, "period");
      break;
  }
  MatrixXd g(x.size(), y.size());
  for (Eigen::Index j = 0; j < y.size(); ++j)
    for (Eigen::Index i = 0; i < x.size(); ++i) g(i, j) = k(x[i], y[j]);
  return g;
}

MatrixXd GaussianJoint::noisy_cov() const {
  MatrixXd c = cov;
  c.diagonal().array() += noise_var;
  return c;
}

MatrixXd cholesky_with_jitter(const MatrixXd& a, double jitter) {
  const auto n = a.rows();
  if (n == 0) return MatrixXd(0, 0);
  std::vector<double> ladder{jitter};
  for (double j : {1e-8, 1e-7, 1e-6})
    if (j > jitter) ladder.push_back(j);
  for (double j : ladder) {
    MatrixXd b = a;
    b.diagonal().array() += j;
    Eigen::LLT<MatrixXd> llt(b);
    if (llt.info() == Eigen::Success && llt.matrixLLT().diagonal().allFinite()) {
      return llt.matrixL();
    }
  }
  throw NumericalError("cholesky: matrix of size " + std::to_string(n) +
                       " not positive definite with jitter up to 1e-6");
}

VectorXd sample_prior(const Kernel& k, const VectorXd& x, double noise_var, Rng& rng) {
  if (noise_var < 0) throw ParameterError("sample_prior: negative noise variance");
  MatrixXd l = cholesky_with_jitter(kernel_eval(k, x, x));
  std::normal_distribution<double> normal;
  VectorXd z(x.size());
  for (auto& v : z) v = normal(rng);
  VectorXd y = l * z;
  if (noise_var > 0) {
    double s = std::sqrt(noise_var);
    for (auto& v : y) v += s * normal(rng);
  }
  return y;
}

GaussianJoint posterior(const Kernel& k, const VectorXd& x_c, const VectorXd& y_c,
                        const VectorXd& x_t, double noise_var) {
  if (x_c.size() != y_c.size()) throw ShapeError("posterior: context inputs and outputs differ in length");
  GaussianJoint g;
  g.noise_var = noise_var;
  MatrixXd k_t = kernel_eval(k, x_t, x_t);
  if (x_c.size() == 0) {
    g.mean = VectorXd::Zero(x_t.size());
    g.cov = std::move(k_t);
    return g;
  }
  MatrixXd k_c = kernel_eval(k, x_c, x_c);
  k_c.diagonal().array() += noise_var;
  MatrixXd l = cholesky_with_jitter(k_c, 0.0);
  MatrixXd k_ct = kernel_eval(k, x_c, x_t);
  auto tri = l.triangularView<Eigen::Lower>();
  MatrixXd a = tri.solve(k_ct);  // L^{-1} K_ct
  VectorXd b = tri.solve(y_c);
  g.mean = a.transpose() * b;
  g.cov = k_t - a.transpose() * a;
  g.cov = 0.5 * (g.cov + g.cov.transpose());
  return g;
}

MeanFieldPrediction diagonal_of(const GaussianJoint& g) {
  return {g.mean, g.cov.diagonal(), g.noise_var};
}

GaussianJoint embed(const MeanFieldPrediction& p) {
  return {p.mean, p.var.asDiagonal(), p.noise_var};
}

double gaussian_kl(const GaussianJoint& p, const GaussianJoint& q) {
  const auto n = p.size();
  if (q.size() != n || p.cov.rows() != n || q.cov.rows() != n) {
    throw ShapeError("gaussian_kl: dimensions " + std::to_string(n) + " and " +
                     std::to_string(q.size()) + " differ");
  }
  if (n == 0) return 0.0;
  // The triangular solve below scales by reciprocal pivots, so Lq^{-1} Lq is
  // only the identity to within an ulp. Identical arguments are answered
  // exactly and roundoff is not allowed to push the result below zero.
  if (p.mean == q.mean && p.noisy_cov() == q.noisy_cov()) return 0.0;
  MatrixXd lp = cholesky_with_jitter(p.noisy_cov(), 0.0);
  MatrixXd lq = cholesky_with_jitter(q.noisy_cov(), 0.0);
  auto tq = lq.triangularView<Eigen::Lower>();
  MatrixXd m = tq.solve(lp);  // Lq^{-1} Lp, trace term is its squared norm
  VectorXd d = tq.solve(VectorXd(q.mean - p.mean));
  double kl = 0.5 * (m.squaredNorm() + d.squaredNorm() - static_cast<double>(n) +
                     log_det_from_cholesky(lq) - log_det_from_cholesky(lp));
  return std::max(kl, 0.0);
}

double gaussian_logpdf(const GaussianJoint& g, const VectorXd& y) {
  if (y.size() != g.size()) throw ShapeError("gaussian_logpdf: dimension mismatch");
  const auto n = g.size();
  if (n == 0) return 0.0;
  MatrixXd l = cholesky_with_jitter(g.noisy_cov(), 0.0);
  VectorXd r = l.triangularView<Eigen::Lower>().solve(VectorXd(y - g.mean));
  return -0.5 * (r.squaredNorm() + log_det_from_cholesky(l) +
                 static_cast<double>(n) * std::log(2 * std::numbers::pi));
}

GaussianJoint gaussian_conditional(const GaussianJoint& g, const std::vector<Eigen::Index>& observed,
                                   const VectorXd& values, double obs_noise_var) {
  const auto n = g.size();
  if (static_cast<Eigen::Index>(observed.size()) != values.size()) {
    throw ShapeError("gaussian_conditional: " + std::to_string(observed.size()) +
                     " indices but " + std::to_string(values.size()) + " values");
  }
  std::vector<char> is_obs(n, 0);
  for (auto i : observed) {
    if (i < 0 || i >= n) throw ShapeError("gaussian_conditional: index out of range");
    if (is_obs[i]) throw ShapeError("gaussian_conditional: repeated index");
    is_obs[i] = 1;
  }
  if (observed.empty()) return g;
  std::vector<Eigen::Index> rest;
  for (Eigen::Index i = 0; i < n; ++i)
    if (!is_obs[i]) rest.push_back(i);

  MatrixXd s_oo = g.cov(observed, observed);
  s_oo.diagonal().array() += obs_noise_var;
  MatrixXd s_ro = g.cov(rest, observed);
  Eigen::LLT<MatrixXd> llt(s_oo);
  if (llt.info() != Eigen::Success) throw NumericalError("gaussian_conditional: singular observed block");
  VectorXd resid = values - g.mean(observed);
  GaussianJoint out;
  out.noise_var = g.noise_var;
  out.mean = g.mean(rest) + s_ro * llt.solve(resid);
  out.cov = g.cov(rest, rest) - s_ro * llt.solve(MatrixXd(s_ro.transpose()));
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  return out;
}

namespace {

struct SparseSystem {
  MatrixXd a;  // K_z + K_zx K_xz
  MatrixXd k_z;
  VectorXd u;  // K_zx y
};

SparseSystem sparse_system(const Kernel& k, const VectorXd& z, const VectorXd& x_c,
                           const VectorXd& y_c) {
  if (x_c.size() != y_c.size()) throw ShapeError("sparse_mean: context inputs and outputs differ in length");
  if (z.size() == 0) throw ShapeError("sparse_mean: empty grid");
  if (z.size() > 1) {
    double h = (z[z.size() - 1] - z[0]) / static_cast<double>(z.size() - 1);
    for (Eigen::Index i = 1; i < z.size(); ++i) {
      if (std::abs(z[i] - z[i - 1] - h) > 1e-9 * std::abs(h)) {
        throw ParameterError("sparse_mean: grid is not uniformly spaced");
      }
    }
  }
  for (auto x : x_c) {
    bool on_grid = false;
    for (auto zi : z) on_grid = on_grid || std::abs(x - zi) < 1e-9;
    if (!on_grid) throw ParameterError("sparse_mean: context input " + std::to_string(x) + " is not a grid point");
  }
  SparseSystem s;
  s.k_z = kernel_eval(k, z, z);
  MatrixXd k_zx = kernel_eval(k, z, x_c);
  s.a = s.k_z + k_zx * k_zx.transpose();
  s.u = k_zx * y_c;
  return s;
}

}  // namespace

VectorXd sparse_mean_direct(const Kernel& k, const VectorXd& z, const VectorXd& x_c,
                            const VectorXd& y_c, const VectorXd& x_t) {
  auto s = sparse_system(k, z, x_c, y_c);
  VectorXd v = s.a.partialPivLu().solve(s.u);
  return kernel_eval(k, x_t, z) * v;
}

JacobiResult sparse_mean_jacobi(const Kernel& k, const VectorXd& z, const VectorXd& x_c,
                                const VectorXd& y_c, const VectorXd& x_t, int iters,
                                JacobiSplit split) {
  if (iters < 0) throw ParameterError("sparse_mean_jacobi: negative iteration count");
  auto s = sparse_system(k, z, x_c, y_c);
  VectorXd d = split == JacobiSplit::Kernel ? VectorXd(s.k_z.diagonal()) : VectorXd(s.a.diagonal());
  if ((d.array() == 0.0).any()) throw NumericalError("sparse_mean_jacobi: zero on the diagonal");
  // Everything not divided by D moves to the right-hand side: R = A - diag(D).
  MatrixXd r = s.a;
  r.diagonal() -= d;

  JacobiResult out;
  MatrixXd m = d.cwiseInverse().asDiagonal() * r;
  out.spectral_radius = m.eigenvalues().cwiseAbs().maxCoeff();
  VectorXd exact = s.a.partialPivLu().solve(s.u);

  VectorXd v = VectorXd::Zero(z.size());
  auto record = [&] {
    out.residual.push_back((s.u - s.a * v).cwiseAbs().maxCoeff());
    out.error.push_back((v - exact).cwiseAbs().maxCoeff());
  };
  record();
  for (int it = 0; it < iters; ++it) {
    v = (s.u - r * v).cwiseQuotient(d);
    record();
  }
  out.v = v;
  out.mean = kernel_eval(k, x_t, z) * v;
  return out;
}

}  // namespace nplab
