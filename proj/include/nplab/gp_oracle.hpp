#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "nplab/rng.hpp"

namespace nplab {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Stationary covariance functions with unit variance.
struct Kernel {
  enum class Kind { EQ, Matern52, WeaklyPeriodic };
  Kind kind = Kind::EQ;
  double length_scale = 0.25;  // EQ, Matern52
  double ld = 0.5;             // WeaklyPeriodic decay
  double lp = 1.0;             // WeaklyPeriodic periodic length scale
  double period = 0.25;

  static Kernel eq(double length_scale);
  static Kernel matern52(double length_scale);
  static Kernel weakly_periodic(double ld, double lp, double period);

  double operator()(double x, double y) const;
  std::string name() const;
};

MatrixXd kernel_eval(const Kernel& k, const VectorXd& x, const VectorXd& y);

/// Joint Gaussian over N function values; observations add noise_var * I.
struct GaussianJoint {
  VectorXd mean;
  MatrixXd cov;
  double noise_var = 0.0;

  Eigen::Index size() const { return mean.size(); }
  /// cov + noise_var * I.
  MatrixXd noisy_cov() const;
};

/// Independent Gaussians with a shared observation noise.
struct MeanFieldPrediction {
  VectorXd mean;
  VectorXd var;
  double noise_var = 0.0;

  Eigen::Index size() const { return mean.size(); }
};

/// Lower Cholesky factor of a + j * I, trying j = jitter first and then
/// 1e-8, 1e-7, 1e-6. Throws NumericalError when all fail.
MatrixXd cholesky_with_jitter(const MatrixXd& a, double jitter = 1e-8);

VectorXd sample_prior(const Kernel& k, const VectorXd& x, double noise_var, Rng& rng);

GaussianJoint posterior(const Kernel& k, const VectorXd& x_c, const VectorXd& y_c,
                        const VectorXd& x_t, double noise_var);

MeanFieldPrediction diagonal_of(const GaussianJoint& g);
/// Mean-field prediction as a joint with diagonal covariance.
GaussianJoint embed(const MeanFieldPrediction& p);

/// KL(p || q) in nats, with each side's noise folded into its covariance.
/// Exactly 0 for identical arguments and never negative.
double gaussian_kl(const GaussianJoint& p, const GaussianJoint& q);

/// log N(y; mean, cov + noise_var * I).
double gaussian_logpdf(const GaussianJoint& g, const VectorXd& y);

/// Distribution of the coordinates not in `observed` given noisy observations
/// values[i] = f[observed[i]] + N(0, obs_noise_var). The result keeps g's
/// noise_var.
GaussianJoint gaussian_conditional(const GaussianJoint& g, const std::vector<Eigen::Index>& observed,
                                   const VectorXd& values, double obs_noise_var);

/// Which diagonal the Jacobi iteration divides by.
///  Kernel: D = diag(K_z), the remaining terms O + K_zx K_xz stay on the right.
///  System: D = diag(K_z + K_zx K_xz), ordinary Jacobi on the full system.
enum class JacobiSplit { Kernel, System };

struct JacobiResult {
  VectorXd mean;                       // K_tz v after the last iteration
  VectorXd v;                          // grid weights after the last iteration
  std::vector<double> residual;        // max |u - A v_r| for r = 0..iters
  std::vector<double> error;           // max |v_r - v*| against the direct solve
  double spectral_radius = 0.0;        // of the iteration matrix
};

/// Sparse posterior mean K_tz (K_z + K_zx K_xz)^{-1} K_zx y by Jacobi
/// iteration from v_0 = 0. Context inputs must lie on the uniform grid z.
JacobiResult sparse_mean_jacobi(const Kernel& k, const VectorXd& z, const VectorXd& x_c,
                                const VectorXd& y_c, const VectorXd& x_t, int iters,
                                JacobiSplit split = JacobiSplit::System);

/// The same quantity by a dense solve.
VectorXd sparse_mean_direct(const Kernel& k, const VectorXd& z, const VectorXd& x_c,
                            const VectorXd& y_c, const VectorXd& x_t);

}  // namespace nplab
