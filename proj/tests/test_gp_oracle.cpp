#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "nplab/errors.hpp"
#include "nplab/gp_oracle.hpp"

using namespace nplab;

namespace {

VectorXd uniform_inputs(Eigen::Index n, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  VectorXd x(n);
  for (auto& v : x) v = u(rng);
  return x;
}

std::vector<Kernel> all_kernels() {
  return {Kernel::eq(0.25), Kernel::matern52(0.25), Kernel::weakly_periodic(0.5, 1.0, 0.25)};
}

GaussianJoint random_joint(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> normal;
  MatrixXd a(n, n);
  for (auto& v : a.reshaped()) v = normal(rng);
  GaussianJoint g;
  g.cov = a * a.transpose() / static_cast<double>(n) + 0.1 * MatrixXd::Identity(n, n);
  g.mean = VectorXd(n);
  for (auto& v : g.mean) v = normal(rng);
  g.noise_var = 0.05;
  return g;
}

GaussianJoint scalar_joint(double mean, double var) {
  return {VectorXd::Constant(1, mean), MatrixXd::Constant(1, 1, var), 0.0};
}

}  // namespace

TEST(Kernel, ClosedForms) {
  EXPECT_DOUBLE_EQ(Kernel::eq(0.25)(0.3, 0.3), 1.0);
  EXPECT_NEAR(Kernel::eq(1.0)(0.0, 1.0), 0.606531, 1e-6);
  EXPECT_NEAR(Kernel::eq(1.0)(0.0, 1.0), std::exp(-0.5), 1e-15);
  double r = std::sqrt(5.0);
  EXPECT_NEAR(Kernel::matern52(1.0)(0.0, 1.0), (1 + r + 5.0 / 3.0) * std::exp(-r), 1e-15);
  EXPECT_NEAR(Kernel::matern52(1.0)(0.0, 1.0), 0.523994, 1e-6);
  // One full period away only the decay term remains.
  auto wp = Kernel::weakly_periodic(0.5, 1.0, 0.25);
  EXPECT_NEAR(wp(0.0, 0.25), std::exp(-0.5 * 0.0625 / 0.25), 1e-12);
  // Half a period away the periodic factor is exp(-2).
  EXPECT_NEAR(wp(0.0, 0.125), std::exp(-0.5 * 0.125 * 0.125 / 0.25 - 2.0), 1e-12);
}

TEST(Kernel, UnitVarianceSymmetricAndPositiveDefinite) {
  Rng rng(1);
  for (const auto& k : all_kernels()) {
    for (int trial = 0; trial < 20; ++trial) {
      auto x = uniform_inputs(1 + trial, -2, 2, rng);
      MatrixXd g = kernel_eval(k, x, x);
      EXPECT_TRUE(g.diagonal().isOnes(0)) << k.name();
      EXPECT_EQ((g - g.transpose()).cwiseAbs().maxCoeff(), 0.0) << k.name();
      MatrixXd a = g;
      a.diagonal().array() += 1e-8;
      Eigen::LLT<MatrixXd> llt(a);
      EXPECT_EQ(llt.info(), Eigen::Success) << k.name() << " n=" << x.size();
    }
  }
}

TEST(Kernel, RejectsNonPositiveScales) {
  EXPECT_THROW(Kernel::eq(0.0), ParameterError);
  EXPECT_THROW(Kernel::matern52(-1.0), ParameterError);
  EXPECT_THROW(Kernel::weakly_periodic(0.5, 0.0, 0.25), ParameterError);
  Kernel k;
  k.length_scale = -0.1;
  EXPECT_THROW(kernel_eval(k, VectorXd::Zero(2), VectorXd::Zero(2)), ParameterError);
}

TEST(SamplePrior, MarginalVarianceMatchesKernel) {
  Rng rng(2);
  auto k = Kernel::eq(0.25);
  VectorXd x = VectorXd::Constant(1, 0.7);
  const int n = 100000;
  double s = 0, ss = 0;
  for (int i = 0; i < n; ++i) {
    double y = sample_prior(k, x, 0.0, rng)[0];
    s += y;
    ss += y * y;
  }
  double var = ss / n - (s / n) * (s / n);
  EXPECT_NEAR(var, 1.0, 0.03);
}

TEST(SamplePrior, DistantPointsAreUncorrelated) {
  Rng rng(3);
  auto k = Kernel::eq(0.25);
  VectorXd x(2);
  x << 0.0, 5.0;
  const int n = 100000;
  double s0 = 0, s1 = 0, s00 = 0, s11 = 0, s01 = 0;
  for (int i = 0; i < n; ++i) {
    auto y = sample_prior(k, x, 0.0, rng);
    s0 += y[0];
    s1 += y[1];
    s00 += y[0] * y[0];
    s11 += y[1] * y[1];
    s01 += y[0] * y[1];
  }
  double c = s01 / n - s0 / n * s1 / n;
  double corr = c / std::sqrt((s00 / n - s0 / n * s0 / n) * (s11 / n - s1 / n * s1 / n));
  EXPECT_LT(std::abs(corr), 0.02);
}

TEST(SamplePrior, DeterministicGivenSeed) {
  auto k = Kernel::matern52(0.25);
  Rng rng(4);
  auto x = uniform_inputs(30, -2, 2, rng);
  Rng a(99), b(99);
  EXPECT_EQ(sample_prior(k, x, 0.05, a), sample_prior(k, x, 0.05, b));
}

TEST(Posterior, EmptyContextIsPrior) {
  auto k = Kernel::eq(0.25);
  Rng rng(5);
  auto x_t = uniform_inputs(5, -2, 2, rng);
  auto g = posterior(k, VectorXd(0), VectorXd(0), x_t, 0.05);
  EXPECT_TRUE(g.mean.isZero(0));
  EXPECT_EQ(g.cov, kernel_eval(k, x_t, x_t));
  EXPECT_EQ(g.noise_var, 0.05);
}

TEST(Posterior, SinglePointClosedForm) {
  VectorXd x = VectorXd::Constant(1, 0.3);
  VectorXd y = VectorXd::Constant(1, 2.0);
  for (double l : {0.1, 0.25, 3.0}) {
    auto g = posterior(Kernel::eq(l), x, y, x, 0.05);
    EXPECT_NEAR(g.mean[0], 2.0 / 1.05, 1e-12);
    EXPECT_NEAR(g.cov(0, 0), 1.0 - 1.0 / 1.05, 1e-12);
  }
}

TEST(Posterior, EmptyTargets) {
  Rng rng(6);
  auto x = uniform_inputs(3, -2, 2, rng);
  auto g = posterior(Kernel::eq(0.25), x, x, VectorXd(0), 0.05);
  EXPECT_EQ(g.size(), 0);
  EXPECT_EQ(g.cov.size(), 0);
}

TEST(Posterior, JointConditioningEqualsSequential) {
  Rng rng(7);
  for (const auto& k : all_kernels()) {
    auto x1 = uniform_inputs(4, -2, 2, rng);
    auto x2 = uniform_inputs(3, -2, 2, rng);
    auto xt = uniform_inputs(5, -2, 2, rng);
    VectorXd y1 = uniform_inputs(4, -1, 1, rng), y2 = uniform_inputs(3, -1, 1, rng);
    VectorXd xc(7), yc(7);
    xc << x1, x2;
    yc << y1, y2;
    auto direct = posterior(k, xc, yc, xt, 0.05);

    // Condition the prior over (x2, xt) on D1, then condition on the noisy x2 values.
    VectorXd all(8);
    all << x2, xt;
    auto step = posterior(k, x1, y1, all, 0.05);
    auto seq = gaussian_conditional(step, {0, 1, 2}, y2, 0.05);
    EXPECT_LT((seq.mean - direct.mean).cwiseAbs().maxCoeff(), 1e-8) << k.name();
    EXPECT_LT((seq.cov - direct.cov).cwiseAbs().maxCoeff(), 1e-8) << k.name();
  }
}

TEST(DiagonalOf, ExtractsVariances) {
  GaussianJoint g{VectorXd::Zero(3), MatrixXd::Identity(3, 3), 0.1};
  EXPECT_TRUE(diagonal_of(g).var.isOnes(0));
  GaussianJoint h{VectorXd::Zero(2), MatrixXd(2, 2), 0.05};
  h.cov << 2, 1, 1, 3;
  auto d = diagonal_of(h);
  EXPECT_EQ(d.var[0], 2.0);
  EXPECT_EQ(d.var[1], 3.0);
  EXPECT_EQ(d.noise_var, 0.05);
}

TEST(DiagonalOf, KlToEmbeddingIsZeroOnlyForDiagonalCov) {
  Rng rng(8);
  auto g = random_joint(4, rng);
  EXPECT_GT(gaussian_kl(g, embed(diagonal_of(g))), 1e-6);
  GaussianJoint d = embed(diagonal_of(g));
  EXPECT_EQ(gaussian_kl(d, embed(diagonal_of(d))), 0.0);
}

TEST(GaussianKl, ClosedForms) {
  Rng rng(9);
  auto p = random_joint(5, rng);
  EXPECT_EQ(gaussian_kl(p, p), 0.0);
  // A posterior whose reciprocal-pivot solve is not exact.
  VectorXd xc(2), yc(2), xt = VectorXd::LinSpaced(5, -1.0, 1.0);
  xc << -0.3, 0.4;
  yc << 0.5, -1.0;
  auto post = posterior(Kernel::eq(0.25), xc, yc, xt, 0.05);
  EXPECT_EQ(gaussian_kl(post, post), 0.0);
  EXPECT_NEAR(gaussian_kl(scalar_joint(0, 1), scalar_joint(0, 2)), 0.5 * (std::log(2.0) + 0.5 - 1.0), 1e-15);
  EXPECT_NEAR(gaussian_kl(scalar_joint(0, 1), scalar_joint(0, 2)), 0.096574, 1e-6);
  EXPECT_NEAR(gaussian_kl(scalar_joint(1, 1), scalar_joint(0, 1)), 0.5, 1e-15);
}

TEST(GaussianKl, NoiseIsFoldedIntoBothSides) {
  auto p = scalar_joint(0, 0.5);
  auto q = scalar_joint(0, 1.5);
  p.noise_var = 0.5;
  q.noise_var = 0.5;
  EXPECT_NEAR(gaussian_kl(p, q), 0.5 * (std::log(2.0) + 0.5 - 1.0), 1e-15);
}

TEST(GaussianKl, NonNegativeOnRandomInstances) {
  Rng rng(10);
  for (int i = 0; i < 200; ++i) {
    auto p = random_joint(1 + i % 7, rng);
    auto q = random_joint(1 + i % 7, rng);
    EXPECT_GE(gaussian_kl(p, q), -1e-10);
  }
  EXPECT_THROW(gaussian_kl(random_joint(2, rng), random_joint(3, rng)), ShapeError);
}

TEST(GaussianConditional, NothingObservedIsIdentity) {
  Rng rng(11);
  auto g = random_joint(4, rng);
  auto c = gaussian_conditional(g, {}, VectorXd(0), 0.05);
  EXPECT_EQ(c.mean, g.mean);
  EXPECT_EQ(c.cov, g.cov);
}

TEST(GaussianConditional, IndependentCoordinatesUnchanged) {
  GaussianJoint g{VectorXd::Zero(3), MatrixXd::Zero(3, 3), 0.0};
  g.mean << 1, 2, 3;
  g.cov << 2, 0.5, 0, 0.5, 1, 0, 0, 0, 4;
  auto c = gaussian_conditional(g, {0, 1}, VectorXd::Constant(2, 7.0), 0.1);
  ASSERT_EQ(c.size(), 1);
  EXPECT_EQ(c.mean[0], 3.0);
  EXPECT_EQ(c.cov(0, 0), 4.0);
}

TEST(GaussianConditional, RejectsBadIndices) {
  Rng rng(12);
  auto g = random_joint(3, rng);
  EXPECT_THROW(gaussian_conditional(g, {0, 0}, VectorXd::Zero(2), 0.1), ShapeError);
  EXPECT_THROW(gaussian_conditional(g, {3}, VectorXd::Zero(1), 0.1), ShapeError);
}

TEST(GaussianConditional, ChainRuleInAnyOrder) {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    auto g = random_joint(5, rng);
    VectorXd y(5);
    std::normal_distribution<double> normal;
    for (auto& v : y) v = normal(rng);
    double joint = gaussian_logpdf(g, y);

    std::vector<Eigen::Index> order(5);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double chain = 0.0;
    std::vector<Eigen::Index> seen;
    for (auto i : order) {
      // Marginal of coordinate i given the noisy values seen so far.
      auto c = gaussian_conditional(g, seen, y(seen), g.noise_var);
      std::vector<Eigen::Index> rest;
      for (Eigen::Index j = 0; j < 5; ++j)
        if (std::find(seen.begin(), seen.end(), j) == seen.end()) rest.push_back(j);
      auto pos = std::find(rest.begin(), rest.end(), i) - rest.begin();
      double var = c.cov(pos, pos) + g.noise_var;
      double r = y[i] - c.mean[pos];
      chain += -0.5 * (r * r / var + std::log(2 * std::numbers::pi * var));
      seen.push_back(i);
    }
    EXPECT_NEAR(chain, joint, 1e-8);
  }
}

class JacobiTest : public ::testing::Test {
 protected:
  // 64-point grid with spacing 0.5 and 8 context points on it.
  void SetUp() override {
    z = VectorXd::LinSpaced(64, -16.0, 15.5);
    Rng rng(14);
    std::vector<Eigen::Index> idx(64);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    x_c = VectorXd(8);
    y_c = VectorXd(8);
    std::normal_distribution<double> normal;
    for (int i = 0; i < 8; ++i) {
      x_c[i] = z[idx[i]];
      y_c[i] = normal(rng);
    }
    x_t = VectorXd::LinSpaced(40, -16.0, 15.5);
  }
  Kernel k = Kernel::eq(0.25);
  VectorXd z, x_c, y_c, x_t;
};

TEST_F(JacobiTest, ConvergesToDirectSolve) {
  auto direct = sparse_mean_direct(k, z, x_c, y_c, x_t);
  auto res = sparse_mean_jacobi(k, z, x_c, y_c, x_t, 500);
  EXPECT_LT(res.spectral_radius, 1.0);
  EXPECT_LT((res.mean - direct).cwiseAbs().maxCoeff(), 1e-6);
  ASSERT_EQ(res.error.size(), 501u);
  for (std::size_t i = 1; i < res.error.size(); ++i) {
    if (res.error[i - 1] == 0.0) break;
    EXPECT_LE(res.error[i], res.error[i - 1]) << "iteration " << i;
  }
}

TEST_F(JacobiTest, KernelDiagonalSplitDivergesWithContext) {
  auto res = sparse_mean_jacobi(k, z, x_c, y_c, x_t, 50, JacobiSplit::Kernel);
  EXPECT_GE(res.spectral_radius, 1.0);
  EXPECT_GT(res.error.back(), res.error.front());
}

TEST_F(JacobiTest, ZeroOutputsGiveZeroMeanEveryIteration) {
  VectorXd zeros = VectorXd::Zero(8);
  for (int iters : {0, 1, 7, 100}) {
    auto res = sparse_mean_jacobi(k, z, x_c, zeros, x_t, iters);
    EXPECT_TRUE(res.mean.isZero(0));
  }
}

TEST_F(JacobiTest, ContextOffGridIsRejected) {
  VectorXd off = x_c;
  off[0] += 0.1;
  EXPECT_THROW(sparse_mean_jacobi(k, z, off, y_c, x_t, 10), ParameterError);
}

TEST(Jacobi, SinglePointClosedForm) {
  auto k = Kernel::eq(0.5);
  VectorXd z = VectorXd::Constant(1, 0.2);
  VectorXd y = VectorXd::Constant(1, 1.7);
  VectorXd t = VectorXd::Constant(1, 0.6);
  double kzx = k(0.2, 0.2);
  double expected = k(0.6, 0.2) * kzx * 1.7 / (k(0.2, 0.2) + kzx * kzx);
  auto res = sparse_mean_jacobi(k, z, z, y, t, 1);
  EXPECT_NEAR(res.mean[0], expected, 1e-14);
  EXPECT_NEAR(sparse_mean_direct(k, z, z, y, t)[0], expected, 1e-14);
}
