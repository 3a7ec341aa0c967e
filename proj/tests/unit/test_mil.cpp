// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "mcmil/error.hpp"
#include "mcmil/mil/mil.hpp"

using namespace mcmil;
using namespace mcmil::mil;

namespace {

MilConfig config(AggregatorKind k) {
  MilConfig c;
  c.kind = k;
  c.dim = 8;
  c.classes = 3;
  c.heads = 2;
  c.attn_hidden = 5;
  return c;
}

Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm) {
  Tensor y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) y(i, j) = x(perm[i], j);
  return y;
}

}  // namespace

TEST(Aggregator, ParseRoundTripAndRejectUnknown) {
  for (auto k : {AggregatorKind::Mean, AggregatorKind::Max, AggregatorKind::Abmil, AggregatorKind::Mha})
    EXPECT_EQ(parse_aggregator(to_string(k)), k);
  EXPECT_THROW(parse_aggregator("transmil"), ConfigError);
}

TEST(Aggregator, MeanAndMaxMatchColumnStatistics) {
  const Tensor f = Tensor::from_rows({{1, -2}, {3, 5}, {-1, 0}});
  for (auto k : {AggregatorKind::Mean, AggregatorKind::Max}) {
    MilConfig c = config(k);
    c.dim = 2;
    MilModel m(c);
    Rng rng(1);
    ParameterSet p;
    m.init(p, rng);
    const Tensor z = m.representation(p, f);
    if (k == AggregatorKind::Mean)
      EXPECT_EQ(z, Tensor::from_rows({{1, 1}}));
    else
      EXPECT_EQ(z, Tensor::from_rows({{3, 5}}));
  }
}

// Bag order must not matter for any aggregator.
TEST(Aggregator, PermutationInvariance) {
  for (auto k : {AggregatorKind::Mean, AggregatorKind::Max, AggregatorKind::Abmil, AggregatorKind::Mha}) {
    MilModel m(config(k));
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      Rng rng(seed);
      ParameterSet p;
      m.init(p, rng);
      const Tensor f = uniform_tensor(7, 8, 1.0, rng);
      const Tensor a = m.predict(p, f), b = m.predict(p, permute_rows(f, {6, 2, 0, 5, 1, 3, 4}));
      EXPECT_LE(diff::max_abs_diff(a, b), 1e-12) << to_string(k);
    }
  }
}

TEST(Aggregator, PredictionsAreDistributions) {
  for (auto k : {AggregatorKind::Mean, AggregatorKind::Max, AggregatorKind::Abmil, AggregatorKind::Mha}) {
    MilModel m(config(k));
    Rng rng(2);
    ParameterSet p;
    m.init(p, rng);
    const Tensor pr = m.predict(p, uniform_tensor(5, 8, 1.0, rng));
    ASSERT_EQ(pr.cols(), 3u);
    double s = 0;
    for (double v : pr.data()) {
      EXPECT_GT(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Aggregator, SingleInstanceBagWorks) {
  for (auto k : {AggregatorKind::Mean, AggregatorKind::Max, AggregatorKind::Abmil, AggregatorKind::Mha}) {
    MilModel m(config(k));
    Rng rng(3);
    ParameterSet p;
    m.init(p, rng);
    EXPECT_TRUE(m.predict(p, uniform_tensor(1, 8, 1.0, rng)).all_finite());
  }
}

TEST(Aggregator, RepresentationThenHeadEqualsPredict) {
  MilModel m(config(AggregatorKind::Abmil));
  Rng rng(4);
  ParameterSet p;
  m.init(p, rng);
  const Tensor f = uniform_tensor(6, 8, 1.0, rng);
  EXPECT_EQ(m.predict_from_representation(p, m.representation(p, f)), m.predict(p, f));
}

TEST(MilConfig, MhaRequiresDivisibleHeads) {
  MilConfig c = config(AggregatorKind::Mha);
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(MilModel, ParameterNamesArePrefixed) {
  MilModel m(config(AggregatorKind::Mha));
  Rng rng(5);
  ParameterSet p;
  m.init(p, rng);
  for (const auto& n : p.names()) EXPECT_EQ(n.rfind("mil.", 0), 0u) << n;
}

TEST(Subsample, SortedDistinctAndBounded) {
  Rng rng(6);
  const auto all = subsample_instances(5, 10, rng);
  EXPECT_EQ(all, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
  for (int t = 0; t < 20; ++t) {
    const auto s = subsample_instances(100, 16, rng);
    ASSERT_EQ(s.size(), 16u);
    EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
    EXPECT_EQ(std::set<std::size_t>(s.begin(), s.end()).size(), 16u);
    EXPECT_LT(s.back(), 100u);
  }
}

TEST(WeightedCrossEntropy, MatchesHandComputation) {
  const Tensor logits = Tensor::from_rows({{0.0, 1.0}, {2.0, -1.0}});
  Graph g;
  auto l = weighted_cross_entropy(g, g.constant(logits), {1, 1}, {1.0, 3.0});
  const double ce0 = std::log(1 + std::exp(-1.0));
  const double ce1 = std::log(std::exp(2.0) + std::exp(-1.0)) + 1.0;
  EXPECT_NEAR(g.value(l)[0], (ce0 + 3 * ce1) / 4, 1e-12);
}

TEST(WeightedCrossEntropy, ScaleInvariantInWeights) {
  Rng rng(7);
  const Tensor logits = uniform_tensor(4, 3, 2.0, rng);
  Graph g;
  const double a = g.value(weighted_cross_entropy(g, g.constant(logits), {0, 2, 1, 2}, {0.5, 1, 2, 0.25}))[0];
  const double b = g.value(weighted_cross_entropy(g, g.constant(logits), {0, 2, 1, 2}, {5, 10, 20, 2.5}))[0];
  EXPECT_NEAR(a, b, 1e-12);
}

TEST(WeightedCrossEntropy, AllZeroWeightsRaise) {
  Graph g;
  EXPECT_THROW(weighted_cross_entropy(g, g.constant(Tensor(2, 2)), {0, 1}, {0.0, 0.0}), NumericError);
  EXPECT_THROW(mil_loss({{0.5, 0.5}}, {0}, {0.0}), NumericError);
}

TEST(MilLoss, AgreesWithGraphLoss) {
  Rng rng(8);
  const Tensor logits = uniform_tensor(3, 2, 2.0, rng);
  std::vector<std::vector<double>> probs;
  for (std::size_t i = 0; i < 3; ++i) {
    const double e0 = std::exp(logits(i, 0)), e1 = std::exp(logits(i, 1));
    probs.push_back({e0 / (e0 + e1), e1 / (e0 + e1)});
  }
  Graph g;
  const double a = g.value(weighted_cross_entropy(g, g.constant(logits), {0, 1, 1}, {1, 2, 3}))[0];
  EXPECT_NEAR(mil_loss(probs, {0, 1, 1}, {1, 2, 3}), a, 1e-12);
}
