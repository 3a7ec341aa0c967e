// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>

#include "mcmil/data/synth.hpp"
#include "mcmil/error.hpp"
#include "mcmil/train/run_config.hpp"
#include "mcmil/train/trainer.hpp"

using namespace mcmil;
using namespace mcmil::train;
namespace fs = std::filesystem;

namespace {

data::Dataset small_dataset(std::uint64_t seed) {
  data::SynthConfig s;
  s.cohorts = 3;
  s.patients_per_cohort = {24};
  s.min_tiles = 4;
  s.max_tiles = 8;
  s.geometry.feature_dim = 8;
  s.shared_signal = 1.5;
  s.cohort_style = 1.0;
  s.seed = seed;
  return data::generate(s);
}

TrainConfig small_train() {
  TrainConfig t;
  t.aggregator = mil::AggregatorKind::Abmil;
  t.epochs = 4;
  t.batch_size = 8;
  t.folds = 2;
  t.lambda = 0.5;
  t.mi_hidden = 8;
  t.mil_lr = 3e-3;
  t.adversary_lr = 3e-3;
  t.top_k = 2;
  return t;
}

// Checkpoints echo the resolved config; reloading reads the architecture from it.
std::string config_echo() {
  RunConfig rc;
  rc.train = small_train();
  return to_json(rc);
}

// Bags are stored cohort by cohort; a stride mixes cohorts into the batch.
std::vector<BatchItem> batch(const data::Dataset& d, std::size_t from, std::size_t n) {
  std::vector<BatchItem> b;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t i = (from + k * 9) % d.bags.size();
    b.push_back({data::bag_features(d.bags[i], d.geometry), d.bags[i].cohort, d.bags[i].label, 1.0});
  }
  return b;
}

struct Models {
  MilState mil;
  mi::MIEstimatorState adv;
  Models(const TrainConfig& t, std::size_t dim, std::size_t cohorts)
      : mil(mil_config(t, dim, 2), diff::AdamConfig{t.mil_lr}), adv(mi_config(t, dim, cohorts)) {
    Rng rng(1);
    mil.model.init(mil.params, rng);
    adv.init(rng);
  }
  static mi::MiConfig mi_config(const TrainConfig& t, std::size_t dim, std::size_t cohorts) {
    mi::MiConfig m;
    m.network = {dim, cohorts, t.mi_hidden};
    m.tau = t.tau;
    m.adam.lr = t.adversary_lr;
    return m;
  }
};

}  // namespace

TEST(SelectTop, StableDescendingWithUndefinedLast) {
  const std::vector<std::optional<double>> v{0.7, std::nullopt, 0.9, 0.7, 0.8};
  EXPECT_EQ(select_top(v, 3), (std::vector<std::size_t>{2, 4, 0}));
  EXPECT_EQ(select_top(v, 10), (std::vector<std::size_t>{2, 4, 0, 3, 1}));
}

TEST(BagModels, KeepsTheBestByValidationAuc) {
  std::vector<Checkpoint> c(4);
  const double auc[] = {0.6, 0.9, 0.8, 0.7};
  for (std::size_t i = 0; i < 4; ++i) {
    c[i].epoch = i;
    c[i].metrics["val_auc"] = auc[i];
  }
  const Ensemble e = bag_models(c, 2);
  ASSERT_EQ(e.size(), 2u);
  EXPECT_EQ(e[0].epoch, 1u);
  EXPECT_EQ(e[1].epoch, 2u);
}

TEST(EncoderMode, ParseRoundTrip) {
  for (auto m : {EncoderMode::Cavit, EncoderMode::PlainVit, EncoderMode::PrecomputedFeatures})
    EXPECT_EQ(parse_encoder_mode(to_string(m)), m);
  EXPECT_THROW(parse_encoder_mode("resnet"), ConfigError);
}

TEST(TrainStep, TotalLossCombinesTerms) {
  const auto d = small_dataset(1);
  const TrainConfig t = small_train();
  Models m(t, 8, 3);
  const StepRecord r = train_step(batch(d, 0, 8), m.mil, &m.adv, t, 3);
  ASSERT_TRUE(r.mi_applied);
  EXPECT_NEAR(r.loss_total, r.loss_mil + t.lambda * r.loss_mi, 1e-12);
}

// With lambda = 0 the adversary must neither train nor touch the MIL update.
TEST(TrainStep, ZeroLambdaMatchesNoAdversaryBitwise) {
  const auto d = small_dataset(2);
  TrainConfig t = small_train();
  t.lambda = 0.0;
  Models a(t, 8, 3), b(t, 8, 3);
  const diff::ParameterSet adv_before = a.adv.params;
  for (std::size_t s = 0; s < 3; ++s) {
    const auto r = train_step(batch(d, s * 8, 8), a.mil, &a.adv, t, 3);
    train_step(batch(d, s * 8, 8), b.mil, nullptr, t, 3);
    EXPECT_FALSE(r.mi_applied);
    EXPECT_EQ(r.loss_mi, 0.0);
  }
  EXPECT_EQ(a.mil.params, b.mil.params);
  EXPECT_EQ(a.adv.params, adv_before);
}

TEST(TrainStep, SingleCohortBatchSkipsMiTerm) {
  auto d = small_dataset(3);
  const TrainConfig t = small_train();
  Models m(t, 8, 3);
  auto b = batch(d, 0, 6);
  for (auto& item : b) item.cohort = CohortId{1};
  EXPECT_FALSE(train_step(b, m.mil, &m.adv, t, 3).mi_applied);
}

TEST(TrainStep, AllZeroWeightsLeaveParametersUntouched) {
  const auto d = small_dataset(4);
  const TrainConfig t = small_train();
  Models m(t, 8, 3);
  auto b = batch(d, 0, 6);
  for (auto& item : b) item.weight = 0.0;
  const auto before = m.mil.params;
  train_step(b, m.mil, &m.adv, t, 3);
  EXPECT_EQ(m.mil.params, before);
}

TEST(TrainStep, MiTermChangesTheUpdate) {
  const auto d = small_dataset(5);
  TrainConfig t = small_train();
  Models a(t, 8, 3), b(t, 8, 3);
  train_step(batch(d, 0, 8), a.mil, &a.adv, t, 3);
  train_step(batch(d, 0, 8), b.mil, nullptr, t, 3);
  EXPECT_FALSE(a.mil.params == b.mil.params);
}

class CrossValidation : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dataset_ = new data::Dataset(small_dataset(6));
    folds_ = new std::vector<FoldResult>(cross_validate({dataset_, config_echo()}, small_train()));
  }
  static void TearDownTestSuite() {
    delete folds_;
    delete dataset_;
  }
  static data::Dataset* dataset_;
  static std::vector<FoldResult>* folds_;
};
data::Dataset* CrossValidation::dataset_ = nullptr;
std::vector<FoldResult>* CrossValidation::folds_ = nullptr;

TEST_F(CrossValidation, ProducesOneResultPerFoldWithTopK) {
  ASSERT_EQ(folds_->size(), 2u);
  for (const auto& f : *folds_) {
    EXPECT_EQ(f.log.size(), 4u);
    EXPECT_EQ(f.ensemble.size(), 2u);
    EXPECT_TRUE(f.test.auc.has_value());
    EXPECT_TRUE(f.test.probe_auc.has_value());
  }
}

TEST_F(CrossValidation, RerunIsBitwiseIdentical) {
  const auto again = cross_validate({dataset_, config_echo()}, small_train());
  EXPECT_EQ(aggregate_json(again), aggregate_json(*folds_));
  for (std::size_t k = 0; k < again.size(); ++k) EXPECT_EQ(again[k].ensemble, (*folds_)[k].ensemble);
}

TEST_F(CrossValidation, ReloadedRankOneReproducesValidationMetrics) {
  const auto& f = (*folds_)[0];
  const LoadedModel m = load_model({f.ensemble[0]}, *dataset_);
  const auto features = mil_features(*dataset_, m.encoder);
  const MetricsReport r = evaluate(m, features, f.split.val);
  EXPECT_EQ(r.auc, f.validation.auc);
  EXPECT_EQ(r.balanced_accuracy, f.validation.balanced_accuracy);
}

TEST_F(CrossValidation, LoadRejectsMismatchedDataset) {
  data::SynthConfig s;
  s.cohorts = 2;
  s.patients_per_cohort = {10};
  s.geometry.feature_dim = 8;
  EXPECT_THROW(load_model({(*folds_)[0].ensemble[0]}, data::generate(s)), MismatchError);
  s.cohorts = 3;
  s.geometry.feature_dim = 6;
  EXPECT_THROW(load_model({(*folds_)[0].ensemble[0]}, data::generate(s)), MismatchError);
}

TEST_F(CrossValidation, WritesTheDocumentedLayout) {
  const fs::path dir = fs::temp_directory_path() / "mcmil_cv_layout_test";
  fs::remove_all(dir);
  write_cv_outputs(dir, *folds_);
  for (const char* f : {"aggregate.json", "aggregate.txt"}) EXPECT_TRUE(fs::exists(dir / f)) << f;
  for (const char* f : {"train_log.txt", "split.json", "report.json", "report.txt", "model_rank1.ckpt", "model_rank2.ckpt"})
    EXPECT_TRUE(fs::exists(dir / "fold_1" / f)) << f;
  EXPECT_EQ(load_checkpoint(dir / "fold_0" / "model_rank1.ckpt"), (*folds_)[0].ensemble[0]);
  fs::remove_all(dir);
}
