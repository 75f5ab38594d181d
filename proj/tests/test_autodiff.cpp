#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "nplab/checkpoint.hpp"
#include "nplab/errors.hpp"
#include "nplab/ops.hpp"

using namespace nplab;

namespace {

std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double lo = -1.0,
                                  double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng) {
  auto n = numel(shape);
  return Tensor(std::move(shape), random_values(n, rng));
}

// Hand-unrolled direct convolution used as an independent oracle.
std::vector<double> direct_conv(const std::vector<double>& x, const std::vector<double>& k,
                                std::size_t stride, std::size_t pad) {
  std::vector<double> padded(pad, 0.0);
  padded.insert(padded.end(), x.begin(), x.end());
  padded.insert(padded.end(), pad, 0.0);
  std::vector<double> out;
  for (std::size_t j = 0; j + k.size() <= padded.size(); j += stride) {
    double s = 0.0;
    for (std::size_t t = 0; t < k.size(); ++t) s += k[k.size() - 1 - t] * padded[j + t];
    out.push_back(s);
  }
  return out;
}

double inner(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST(Primitives, ReluClampsNegatives) {
  auto y = relu(Tensor::vector({-1, 0, 2}));
  EXPECT_EQ(std::vector<double>(y.values().begin(), y.values().end()),
            (std::vector<double>{0, 0, 2}));
}

TEST(Primitives, SoftplusAtZeroIsLogTwo) {
  EXPECT_NEAR(softplus(Tensor::scalar(0.0)).item(), std::log(2.0), 1e-15);
  EXPECT_NEAR(softplus(Tensor::scalar(0.0)).item(), 0.693147, 1e-6);
  // Stable for large magnitudes.
  EXPECT_DOUBLE_EQ(softplus(Tensor::scalar(800.0)).item(), 800.0);
  EXPECT_GT(softplus(Tensor::scalar(-800.0)).item(), -1e-300);
}

TEST(Primitives, Conv1dMatchesHandExample) {
  auto x = Tensor::matrix(1, 4, {1, 0, 0, 0});
  auto w = Tensor({1, 1, 3}, {1, 2, 3});
  auto y = conv1d(x, w, Tensor(), 1, 1);
  ASSERT_EQ(y.shape(), (Shape{1, 4}));
  EXPECT_EQ(std::vector<double>(y.values().begin(), y.values().end()),
            (std::vector<double>{2, 3, 0, 0}));
}

TEST(Primitives, Conv1dMatchesDirectOracle) {
  std::mt19937_64 rng(3);
  for (std::size_t stride : {1u, 2u}) {
    for (std::size_t k : {1u, 3u, 5u}) {
      auto xs = random_values(13, rng);
      auto ks = random_values(k, rng);
      auto y = conv1d(Tensor::matrix(1, 13, xs), Tensor({1, 1, k}, ks), Tensor(), stride, k / 2);
      auto expected = direct_conv(xs, ks, stride, k / 2);
      ASSERT_EQ(y.size(), expected.size());
      for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(y[i], expected[i], 1e-14);
    }
  }
}

TEST(Primitives, BroadcastOverLeadingAxes) {
  auto a = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  auto b = Tensor::vector({10, 20, 30});
  auto c = add(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 3}));
  EXPECT_DOUBLE_EQ(c[4], 25.0);
  auto s = mul(Tensor::scalar(2.0), a);
  EXPECT_DOUBLE_EQ(s[5], 12.0);
}

TEST(Primitives, ShapeMismatchNamesOperationAndShapes) {
  auto a = Tensor::zeros({2, 3});
  auto b = Tensor::zeros({2});
  try {
    add(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("add"), std::string::npos);
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos);
    EXPECT_NE(msg.find("[2]"), std::string::npos);
  }
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
  EXPECT_THROW(conv1d(Tensor::zeros({2, 5}), Tensor::zeros({1, 3, 3}), Tensor(), 1, 1), ShapeError);
}

TEST(Primitives, ConcatAndSliceAlongAxes) {
  auto a = Tensor::matrix(2, 2, {1, 2, 3, 4});
  auto b = Tensor::matrix(2, 1, {5, 6});
  std::vector<Tensor> parts{a, b};
  auto c = concat(parts, 1);
  EXPECT_EQ(c.shape(), (Shape{2, 3}));
  EXPECT_EQ(std::vector<double>(c.values().begin(), c.values().end()),
            (std::vector<double>{1, 2, 5, 3, 4, 6}));
  auto s = slice(c, 1, 1, 3);
  EXPECT_EQ(std::vector<double>(s.values().begin(), s.values().end()),
            (std::vector<double>{2, 5, 4, 6}));
}

TEST(Backward, SumOfSquares) {
  auto x = Tensor::parameter({2}, {1, 2});
  auto g = backward(sum(mul(x, x))).of(x);
  EXPECT_DOUBLE_EQ(g[0], 2.0);
  EXPECT_DOUBLE_EQ(g[1], 4.0);
}

TEST(Backward, BilinearForm) {
  auto w = Tensor::parameter({1, 1}, {3});
  auto x = Tensor::parameter({1, 1}, {5});
  auto grads = backward(sum(matmul(w, x)));
  EXPECT_DOUBLE_EQ(grads.of(w)[0], 5.0);
  EXPECT_DOUBLE_EQ(grads.of(x)[0], 3.0);
}

TEST(Backward, UnreachableParameterGetsZeros) {
  auto x = Tensor::parameter({2}, {1, 2});
  auto unused = Tensor::parameter({3}, {1, 2, 3});
  auto grads = backward(sum(x));
  EXPECT_FALSE(grads.contains(unused));
  auto g = grads.of(unused);
  EXPECT_EQ(g.shape(), (Shape{3}));
  for (double v : g.values()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, NonScalarLossIsRejected) {
  auto x = Tensor::parameter({2}, {1, 2});
  EXPECT_THROW(backward(mul(x, x)), ShapeError);
}

TEST(Backward, GraphIsTopologicallyOrdered) {
  auto x = Tensor::parameter({3}, {1, 2, 3});
  auto y = exp(x);
  auto z = add(mul(y, x), y);  // y is used twice
  auto graph = trace(sum(z));
  std::set<std::uint64_t> seen;
  for (std::size_t i = 0; i < graph.size(); ++i) {
    if (i) EXPECT_LT(graph[i - 1].id, graph[i].id);
    for (auto in : graph[i].inputs) EXPECT_TRUE(seen.count(in)) << "input after consumer";
    EXPECT_TRUE(seen.insert(graph[i].id).second) << "node visited twice";
  }
  // Shared subexpression accumulates both paths: d/dx sum(e^x x + e^x) = e^x (x + 2).
  auto g = backward(sum(z)).of(x);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(g[i], std::exp(x[i]) * (x[i] + 2), 1e-12);
}

TEST(GradCheck, SumOfSquares) {
  auto err = grad_check([](const Tensor& t) { return sum(mul(t, t)); },
                        Tensor::vector({0.3, -1.2, 2.5}), 1e-5);
  EXPECT_LT(err, 1e-6);
}

TEST(GradCheck, ConstantFunctionIsExact) {
  auto err = grad_check([](const Tensor&) { return Tensor::scalar(4.0); },
                        Tensor::vector({0.3, -1.2}), 1e-5);
  EXPECT_EQ(err, 0.0);
}

TEST(GradCheck, ConvReluMatmulChain) {
  std::mt19937_64 rng(11);
  auto w = random_tensor({3, 2, 5}, rng);
  auto m = random_tensor({8, 4}, rng);
  auto f = [&](const Tensor& x) {
    auto h = relu(conv1d(x, w, Tensor(), 2, 2));  // [3, 8]
    return sum(matmul(h, m));
  };
  auto x = random_tensor({2, 16}, rng);
  EXPECT_LT(grad_check(f, x, 1e-5), 1e-4);
}

// Every primitive against central differences on random smooth inputs.
class PrimitiveGradients : public ::testing::TestWithParam<int> {};

TEST_P(PrimitiveGradients, MatchFiniteDifferences) {
  std::mt19937_64 rng(100 + GetParam());
  auto other = random_tensor({3, 4}, rng);
  auto vec = random_tensor({4}, rng);
  auto positive = [](const Tensor& t) { return add_scalar(square(t), 0.5); };
  // Inputs to relu are kept at least 1e-3 away from the kink.
  auto away_from_zero = [](const Tensor& t) { return add_scalar(square(t), 1e-3); };
  std::vector<std::function<Tensor(const Tensor&)>> fns = {
      [&](const Tensor& t) { return sum(mul(add(t, other), sub(t, vec))); },
      [&](const Tensor& t) { return sum(div(t, positive(other))); },
      [&](const Tensor& t) { return sum(div(other, positive(t))); },
      [&](const Tensor& t) { return sum(exp(t)); },
      [&](const Tensor& t) { return sum(log(positive(t))); },
      [&](const Tensor& t) { return sum(mul(relu(away_from_zero(t)), other)); },
      [&](const Tensor& t) { return sum(mul(relu(neg(away_from_zero(t))), other)); },
      [&](const Tensor& t) { return sum(mul(softplus(t), other)); },
      [&](const Tensor& t) { return sum(square(matmul(t, transpose(other)))); },
      [&](const Tensor& t) { return sum(square(sum(t, 0))) + sum(square(mean(t, 1))); },
      [&](const Tensor& t) { return mean(mul(reshape(t, {4, 3}), reshape(other, {4, 3}))); },
      [&](const Tensor& t) {
        std::vector<Tensor> parts{t, square(other)};
        return sum(square(slice(concat(parts, 0), 0, 2, 5)));
      },
      [&](const Tensor& t) { return sum(square(diag(slice(reshape(t, {12}), 0, 5, 9)))); },
      [&](const Tensor& t) { return sum(scale(neg(t), 3.0)) + sum(square(add_scalar(t, 2.0))); },
  };
  auto x = random_tensor({3, 4}, rng);
  for (std::size_t i = 0; i < fns.size(); ++i) {
    EXPECT_LT(grad_check(fns[i], x, 1e-5), 1e-4) << "function " << i;
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, PrimitiveGradients, ::testing::Range(0, 5));

TEST(GradCheck, ConvolutionsAllArguments) {
  std::mt19937_64 rng(7);
  auto x1 = random_tensor({2, 9}, rng);
  auto w1 = random_tensor({3, 2, 5}, rng);
  auto b1 = random_tensor({3}, rng);
  auto wt1 = random_tensor({2, 3, 5}, rng);
  auto x2 = random_tensor({2, 7, 7}, rng);
  auto w2 = random_tensor({3, 2, 3, 3}, rng);
  auto b2 = random_tensor({3}, rng);
  auto wt2 = random_tensor({2, 3, 3, 3}, rng);
  auto probe1 = random_tensor({2, 5}, rng);
  auto probe_out = random_tensor({3, 9}, rng);

  EXPECT_LT(grad_check([&](const Tensor& t) { return sum(square(conv1d(t, w1, b1, 2, 2))); }, x1), 1e-4);
  EXPECT_LT(grad_check([&](const Tensor& t) { return sum(square(conv1d(x1, t, b1, 1, 2))); }, w1), 1e-4);
  EXPECT_LT(grad_check([&](const Tensor& t) { return sum(square(conv1d(x1, w1, t, 2, 2))); }, b1), 1e-4);
  EXPECT_LT(grad_check([&](const Tensor& t) {
              return sum(square(conv_transpose1d(t, wt1, b1, 2, 2, 1)));
            }, x1), 1e-4);
  EXPECT_LT(grad_check([&](const Tensor& t) {
              return sum(square(conv_transpose1d(x1, t, b1, 2, 2, 1)));
            }, wt1), 1e-4);
  EXPECT_LT(grad_check([&](const Tensor& t) {
              return sum(mul(conv_transpose1d(probe1, wt1, t, 2, 2, 0), probe_out));
            }, b1.detach()), 1e-4);
  EXPECT_LT(grad_check([&](const Tensor& t) { return sum(square(conv2d(t, w2, b2, 2, 1))); }, x2), 1e-4);
  EXPECT_LT(grad_check([&](const Tensor& t) { return sum(square(conv2d(x2, t, b2, 1, 1))); }, w2), 1e-4);
  EXPECT_LT(grad_check([&](const Tensor& t) { return sum(square(conv2d(x2, w2, t, 2, 1))); }, b2), 1e-4);
  EXPECT_LT(grad_check([&](const Tensor& t) {
              return sum(square(conv_transpose2d(t, wt2, b2, 2, 1, 1)));
            }, x2), 1e-4);
  EXPECT_LT(grad_check([&](const Tensor& t) {
              return sum(square(conv_transpose2d(x2, t, b2, 2, 1, 1)));
            }, wt2), 1e-4);
}

TEST(Adjoint, ConvTranspose1dIsAdjointOfConv1d) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    for (std::size_t stride : {1u, 2u}) {
      auto x = random_tensor({3, 16}, rng);
      auto w = random_tensor({4, 3, 5}, rng);
      auto y = conv1d(x, w, Tensor(), stride, 2);
      auto probe = random_tensor(y.shape(), rng);
      // Output padding restores the input length for even lengths at stride 2.
      auto back = conv_transpose1d(probe, w, Tensor(), stride, 2, stride - 1);
      ASSERT_EQ(back.shape(), x.shape());
      EXPECT_NEAR(inner(y, probe), inner(x, back), 1e-10);
    }
  }
}

TEST(Adjoint, ConvTranspose2dIsAdjointOfConv2d) {
  std::mt19937_64 rng(6);
  auto x = random_tensor({2, 8, 8}, rng);
  auto w = random_tensor({3, 2, 5, 5}, rng);
  auto y = conv2d(x, w, Tensor(), 2, 2);
  auto probe = random_tensor(y.shape(), rng);
  auto back = conv_transpose2d(probe, w, Tensor(), 2, 2, 1);
  ASSERT_EQ(back.shape(), x.shape());
  EXPECT_NEAR(inner(y, probe), inner(x, back), 1e-10);
}

TEST(MvnLogpdf, MatchesClosedFormAndGradients) {
  auto cov = Tensor::matrix(2, 2, {2.0, 0.5, 0.5, 1.0});
  auto mean = Tensor::vector({0.1, -0.2});
  auto y = Tensor::vector({0.4, 0.3});
  // Independent evaluation with the explicit 2x2 inverse.
  double det = 2.0 * 1.0 - 0.25;
  double r0 = 0.3, r1 = 0.5;
  double quad = (1.0 * r0 * r0 - 2 * 0.5 * r0 * r1 + 2.0 * r1 * r1) / det;
  double expected = -0.5 * (quad + std::log(det) + 2 * std::log(2 * M_PI));
  EXPECT_NEAR(mvn_logpdf(y, mean, cov).item(), expected, 1e-12);

  EXPECT_LT(grad_check([&](const Tensor& t) { return mvn_logpdf(y, t, cov); }, mean), 1e-6);
  EXPECT_LT(grad_check([&](const Tensor& t) { return mvn_logpdf(t, mean, cov); }, y), 1e-6);
  EXPECT_LT(grad_check([&](const Tensor& t) { return mvn_logpdf(y, mean, t); }, cov), 1e-6);
  EXPECT_THROW(mvn_logpdf(y, mean, Tensor::matrix(2, 2, {1, 2, 2, 1})), NumericalError);
}

TEST(Determinism, ReplayIsBitIdentical) {
  auto run = [] {
    std::mt19937_64 rng(42);
    auto x = random_tensor({2, 32}, rng);
    auto w = Tensor::parameter({4, 2, 5}, random_values(40, rng));
    auto loss = sum(square(relu(conv1d(x, w, Tensor(), 2, 2))));
    auto g = backward(loss).of(w);
    std::vector<double> out{loss.item()};
    out.insert(out.end(), g.values().begin(), g.values().end());
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(Checkpoint, RoundTripsExactly) {
  std::mt19937_64 rng(9);
  Checkpoint ck;
  ck.metadata["variant"] = "convcnp";
  ck.metadata["width"] = "32";
  ck.tensors.emplace_back("a.weight", random_tensor({2, 3, 5}, rng));
  ck.tensors.emplace_back("b", Tensor::vector({1e-300, -0.0, 1.0 / 3.0}));
  ck.tensors.emplace_back("scalar", Tensor::scalar(M_PI));
  std::stringstream ss;
  write_checkpoint(ss, ck);
  EXPECT_EQ(ss.str().rfind("npcheckpoint v1\n", 0), 0u);
  auto back = read_checkpoint(ss);
  EXPECT_EQ(back.metadata, ck.metadata);
  ASSERT_EQ(back.tensors.size(), ck.tensors.size());
  for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
    EXPECT_EQ(back.tensors[i].first, ck.tensors[i].first);
    EXPECT_EQ(back.tensors[i].second.shape(), ck.tensors[i].second.shape());
    auto a = ck.tensors[i].second.values();
    auto b = back.tensors[i].second.values();
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
  }
}

TEST(Checkpoint, RejectsMissingHeader) {
  std::stringstream ss("not a checkpoint\n");
  EXPECT_THROW(read_checkpoint(ss), std::runtime_error);
}
