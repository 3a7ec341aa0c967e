// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "mcmil/error.hpp"
#include "mcmil/train/checkpoint.hpp"
#include "mcmil/train/metrics.hpp"
#include "mcmil/train/probe.hpp"
#include "mcmil/util/rng.hpp"
#include "oracles.hpp"

using namespace mcmil;
using namespace mcmil::train;
namespace fs = std::filesystem;

TEST(Auc, AgreesWithPairCountAndTrapezoidOracles) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    std::uniform_int_distribution<int> bit(0, 1), lvl(0, 6);
    std::vector<double> s(5 + seed % 17);
    std::vector<int> y(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      s[i] = lvl(rng) / 6.0;  // coarse grid forces ties
      y[i] = bit(rng);
    }
    const auto a = auc(s, y), p = oracle::pair_count_auc(s, y), t = oracle::trapezoid_auc(s, y);
    ASSERT_EQ(a.has_value(), p.has_value());
    if (!a) continue;
    EXPECT_NEAR(*a, *p, 1e-12);
    EXPECT_NEAR(*a, *t, 1e-12);
  }
}

TEST(Auc, UndefinedWithOneClass) {
  EXPECT_FALSE(auc({0.1, 0.4}, {1, 1}).has_value());
  EXPECT_FALSE(auc({}, {}).has_value());
}

TEST(MacroAuc, AveragesDefinedClassesOnly) {
  // Class 2 never occurs: it is left out of the mean.
  const std::vector<std::vector<double>> p{{0.8, 0.1, 0.1}, {0.2, 0.7, 0.1}, {0.6, 0.3, 0.1}, {0.3, 0.6, 0.1}};
  const auto m = macro_ovr_auc(p, {0, 1, 0, 1}, 3);
  ASSERT_TRUE(m.has_value());
  EXPECT_DOUBLE_EQ(*m, 1.0);
}

TEST(BalancedAccuracy, MeanRecall) {
  const auto b = balanced_accuracy({0, 0, 1, 1, 1}, {0, 1, 1, 1, 0}, 2);
  ASSERT_TRUE(b.has_value());
  EXPECT_DOUBLE_EQ(*b, (0.5 + 2.0 / 3.0) / 2);
  EXPECT_FALSE(balanced_accuracy({0}, {0}, 2).has_value());
}

TEST(Argmax, FirstMaximumWins) { EXPECT_EQ(argmax({0.2, 0.4, 0.4}), 1u); }

TEST(PatientLevel, AveragesSlideProbabilities) {
  std::vector<SlidePrediction> s{{"0/a", CohortId{0}, 1, {0.2, 0.8}},
                                  {"0/b", CohortId{0}, 0, {0.9, 0.1}},
                                  {"0/a", CohortId{0}, 1, {0.6, 0.4}}};
  const auto p = patient_level(s);
  ASSERT_EQ(p.size(), 2u);
  EXPECT_EQ(p[0].patient_key, "0/a");
  EXPECT_NEAR(p[0].probabilities[1], 0.6, 1e-15);
  EXPECT_EQ(p[1].patient_key, "0/b");
}

TEST(ComputeMetrics, PerCohortAucUsesOnlyThatCohort) {
  std::vector<SlidePrediction> s{{"0/a", CohortId{0}, 1, {0.2, 0.8}}, {"0/b", CohortId{0}, 0, {0.9, 0.1}},
                                 {"1/c", CohortId{1}, 1, {0.9, 0.1}}, {"1/d", CohortId{1}, 0, {0.2, 0.8}},
                                 {"2/e", CohortId{2}, 1, {0.5, 0.5}}};
  const auto m = compute_metrics(s, 2, 3);
  EXPECT_EQ(m.patients, 5u);
  EXPECT_DOUBLE_EQ(*m.cohort_auc.at(0), 1.0);
  EXPECT_DOUBLE_EQ(*m.cohort_auc.at(1), 0.0);
  EXPECT_FALSE(m.cohort_auc.at(2).has_value());
}

TEST(Probe, SeparableCohortsGiveHighAucAndNoiseGivesChance) {
  Rng rng(3);
  const std::size_t n = 300;
  diff::Tensor sep(n, 4), noise(n, 4);
  std::vector<CohortId> c;
  std::normal_distribution<double> nd;
  for (std::size_t i = 0; i < n; ++i) {
    c.push_back(CohortId{i % 3});
    for (std::size_t j = 0; j < 4; ++j) {
      sep(i, j) = nd(rng) + (j == i % 3 ? 3.0 : 0.0);
      noise(i, j) = nd(rng);
    }
  }
  const auto a = cohort_probe(sep, c, 3);
  EXPECT_GT(a.auc, 0.95);
  EXPECT_TRUE(a.converged);
  EXPECT_EQ(a.train_size + a.test_size, n);
  const auto b = cohort_probe(noise, c, 3);
  EXPECT_NEAR(b.auc, 0.5, 0.1);
}

TEST(Probe, SingleCohortRejected) {
  EXPECT_THROW(cohort_probe(diff::Tensor(10, 2), std::vector<CohortId>(10, CohortId{0}), 1), ConfigError);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  const fs::path p = fs::temp_directory_path() / "mcmil_ckpt_roundtrip.ckpt";
  Rng rng(1);
  Checkpoint c;
  c.params.add("mil.w", uniform_tensor(3, 4, 1.0, rng));
  c.params.add("mi.b", diff::Tensor::from_rows({{1.0 / 3.0, -0.0, 1e-300}}));
  c.epoch = 7;
  c.metrics = {{"val_auc", 0.75}};
  c.info = {{"cohorts", 3}};
  c.config_json = R"({"lambda":0.5})";
  save_checkpoint(c, p);
  EXPECT_EQ(load_checkpoint(p), c);
  fs::remove(p);
}

TEST(Checkpoint, CorruptFilesRejected) {
  const fs::path p = fs::temp_directory_path() / "mcmil_ckpt_corrupt.ckpt";
  {
    std::ofstream out(p, std::ios::binary);
    out << "NOTACKPT";
  }
  EXPECT_THROW(load_checkpoint(p), ParseError);
  fs::remove(p);
  EXPECT_THROW(load_checkpoint(p), IoError);
}

TEST(Checkpoint, TruncatedPayloadRejected) {
  const fs::path p = fs::temp_directory_path() / "mcmil_ckpt_trunc.ckpt";
  Checkpoint c;
  c.params.add("w", diff::Tensor(4, 4, 1.0));
  save_checkpoint(c, p);
  fs::resize_file(p, fs::file_size(p) - 8);
  EXPECT_THROW(load_checkpoint(p), ParseError);
  fs::remove(p);
}
