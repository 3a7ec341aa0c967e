// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "mcmil/diff/adam.hpp"
#include "mcmil/diff/evaluation.hpp"
#include "mcmil/diff/finite_diff.hpp"
#include "mcmil/diff/graph.hpp"
#include "mcmil/error.hpp"
#include "mcmil/util/rng.hpp"
#include "mcmil/verify/suites.hpp"
#include "oracles.hpp"

using namespace mcmil;
using diff::Graph;
using diff::Tensor;

TEST(Tensor, MatmulMatchesNaiveLoops) {
  Rng rng(3);
  for (int t = 0; t < 5; ++t) {
    const Tensor a = uniform_tensor(4 + t, 7, 1.0, rng), b = uniform_tensor(7, 3 + t, 1.0, rng);
    EXPECT_LE(diff::max_abs_diff(diff::matmul(a, b), oracle::naive_matmul(a, b)), 1e-13);
    EXPECT_LE(diff::max_abs_diff(diff::matmul_nt(a, diff::transpose(b)), oracle::naive_matmul(a, b)), 1e-13);
    EXPECT_LE(diff::max_abs_diff(diff::matmul_tn(diff::transpose(a), b), oracle::naive_matmul(a, b)), 1e-13);
  }
}

TEST(Tensor, ShapeMismatchThrows) {
  EXPECT_THROW(diff::matmul(Tensor(2, 3), Tensor(2, 3)), ShapeError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>(3)), ShapeError);
}

TEST(Graph, SoftmaxRowsSumToOne) {
  Rng rng(1);
  Graph g;
  auto s = g.softmax_rows(g.constant(uniform_tensor(5, 9, 30.0, rng)));
  for (std::size_t i = 0; i < 5; ++i) {
    double sum = 0;
    for (std::size_t j = 0; j < 9; ++j) sum += g.value(s)(i, j);
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Graph, LayerNormRowsHaveZeroMeanUnitVariance) {
  Rng rng(2);
  Graph g;
  auto y = g.layer_norm_rows(g.constant(uniform_tensor(3, 16, 4.0, rng)), g.constant(Tensor(1, 16, 1.0)),
                             g.constant(Tensor(1, 16, 0.0)), 0.0);
  for (std::size_t i = 0; i < 3; ++i) {
    std::vector<double> row;
    for (std::size_t j = 0; j < 16; ++j) row.push_back(g.value(y)(i, j));
    auto [m, s] = oracle::mean_std(row);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Graph, UnreachedInputsGetExactZeroGradient) {
  diff::NamedTensors in{{"a", Tensor::from_rows({{1, 2}})}, {"b", Tensor::from_rows({{3, 4}})}};
  diff::Evaluation ev(
      [](Graph& g, const std::map<std::string, diff::Var>& x) {
        return std::map<std::string, diff::Var>{{"y", g.sum_all(g.mul(x.at("a"), x.at("a")))}};
      },
      in);
  auto grads = ev.backward("y", Tensor::scalar(1.0));
  EXPECT_EQ(grads.at("a"), Tensor::from_rows({{2, 4}}));
  EXPECT_EQ(grads.at("b"), Tensor::from_rows({{0, 0}}));
}

TEST(Graph, ClipGradientIsOneInsideZeroOutside) {
  diff::ParameterSet p;
  p.add("x", Tensor::from_rows({{-2.0, -0.5, 0.0, 0.7, 3.0}}));
  Graph g;
  g.backward(g.sum_all(g.clip(g.param(p, "x"), -1.0, 1.0)));
  EXPECT_EQ(g.param_gradients(p).at("x"), Tensor::from_rows({{0.0, 1.0, 1.0, 1.0, 0.0}}));
}

TEST(Graph, ClipGradientMutationFlipsSign) {
  diff::ParameterSet p;
  p.add("x", Tensor::from_rows({{-0.5, 0.7}}));
  diff::GraphOptions o;
  o.flip_clip_gradient = true;
  Graph g(o);
  g.backward(g.sum_all(g.clip(g.param(p, "x"), -1.0, 1.0)));
  EXPECT_EQ(g.param_gradients(p).at("x"), Tensor::from_rows({{-1.0, -1.0}}));
}

TEST(Graph, NonFiniteValueRaisesNumericErrorNamingTheNode) {
  Graph g;
  try {
    g.log(g.constant(Tensor::from_rows({{-1.0}})));
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("log"), std::string::npos);
  }
}

TEST(Graph, FrozenParametersReceiveNoGradient) {
  diff::ParameterSet p;
  p.add("w", Tensor::from_rows({{2.0}}));
  p.add("x", Tensor::from_rows({{3.0}}));
  Graph g;
  g.backward(g.mul(g.frozen(p, "w"), g.param(p, "x")));
  auto grads = g.param_gradients(p);
  EXPECT_EQ(grads.at("w"), Tensor::from_rows({{0.0}}));
  EXPECT_EQ(grads.at("x"), Tensor::from_rows({{2.0}}));
}

TEST(Graph, PairwiseSumEnumeratesAllPairs) {
  Graph g;
  auto y = g.pairwise_sum(g.constant(Tensor::from_rows({{1, 10}, {2, 20}})),
                          g.constant(Tensor::from_rows({{100, 1000}, {300, 3000}, {500, 5000}})));
  const Tensor& v = g.value(y);
  ASSERT_EQ(v.rows(), 6u);
  EXPECT_EQ(v(0, 0), 101.0);
  EXPECT_EQ(v(2, 1), 5010.0);
  EXPECT_EQ(v(5, 0), 502.0);
}

// Every differentiable operation against independent central differences.
TEST(GradientProperty, AllOperationsMatchCentralDifferences) {
  constexpr double kEps = 1e-3;
  for (std::uint64_t inst = 0; inst < 3; ++inst) {
    Rng rng(derive_seed(77, inst));
    for (const auto& c : verify::gradient_cases(rng)) {
      const Tensor y = verify::output_at(c);
      const Tensor proj = uniform_tensor(y.rows(), y.cols(), 1.0, rng);
      const auto analytic = verify::analytic_gradient(c, proj);
      std::vector<double> a, n;
      for (const auto& name : c.point.names()) {
        const Tensor& x0 = c.point.at(name);
        std::vector<double> x(x0.data().begin(), x0.data().end());
        auto f = [&](const std::vector<double>& v) {
          diff::ParameterSet p = c.point;
          p.set(name, Tensor(x0.shape(), v));
          return verify::projected_value(c, p, proj);
        };
        const auto num = oracle::central_difference(f, x, kEps);
        n.insert(n.end(), num.begin(), num.end());
        const Tensor& an = analytic.at(name);
        a.insert(a.end(), an.data().begin(), an.data().end());
      }
      EXPECT_LT(oracle::relative_error(a, n), 1e-4) << c.name << " instance " << inst;
    }
  }
}

TEST(FiniteDiff, MatchesOracleOnPolynomial) {
  const Tensor x = Tensor::from_rows({{0.3, -1.2}});
  auto f = [](const Tensor& t) { return t[0] * t[0] * t[1] + std::sin(t[1]); };
  const Tensor g = diff::finite_diff_grad(f, x, 1e-4);
  EXPECT_NEAR(g[0], 2 * 0.3 * -1.2, 1e-7);
  EXPECT_NEAR(g[1], 0.09 + std::cos(-1.2), 1e-7);
}

TEST(Adam, FirstStepMovesByLearningRateAgainstGradientSign) {
  diff::ParameterSet p;
  p.add("w", Tensor::from_rows({{1.0, -1.0, 0.5}}));
  diff::Adam opt(diff::AdamConfig{0.1});
  opt.step(p, {{"w", Tensor::from_rows({{3.0, -0.2, 0.0}})}});
  // Bias-corrected first step: m_hat / sqrt(v_hat) = sign(g).
  EXPECT_NEAR(p.at("w")[0], 0.9, 1e-8);
  EXPECT_NEAR(p.at("w")[1], -0.9, 1e-7);
  EXPECT_EQ(p.at("w")[2], 0.5);
}

TEST(Adam, ZeroLearningRateIsBitwiseNoop) {
  diff::ParameterSet p;
  p.add("w", Tensor::from_rows({{1.0, -1.0}}));
  const diff::ParameterSet before = p;
  diff::Adam opt(diff::AdamConfig{0.0});
  opt.step(p, {{"w", Tensor::from_rows({{3.0, -0.2}})}});
  EXPECT_EQ(p, before);
}
