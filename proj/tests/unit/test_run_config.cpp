// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "mcmil/error.hpp"
#include "mcmil/train/run_config.hpp"

using namespace mcmil;
using namespace mcmil::train;

TEST(RunConfig, KeysAreSorted) {
  const auto keys = run_config_keys();
  EXPECT_TRUE(std::is_sorted(keys.begin(), keys.end()));
  EXPECT_NE(std::find(keys.begin(), keys.end(), "lambda"), keys.end());
}

TEST(RunConfig, JsonRoundTripIsAFixedPoint) {
  RunConfig c;
  apply_value(c, "lambda", "0.37");
  apply_value(c, "aggregator", "abmil");
  apply_value(c, "patients_per_cohort", "[10, 20]");
  apply_value(c, "world_seed", "12");
  const std::string once = to_json(c);
  RunConfig d;
  apply_json(d, once);
  EXPECT_EQ(to_json(d), once);
  EXPECT_EQ(d.train.lambda, 0.37);
  EXPECT_EQ(d.train.aggregator, mil::AggregatorKind::Abmil);
  EXPECT_EQ(d.synth.patients_per_cohort, (std::vector<std::size_t>{10, 20}));
  EXPECT_EQ(d.synth.world_seed, 12u);
}

TEST(RunConfig, SeedFeedsGeneratorAndTrainer) {
  RunConfig c;
  apply_value(c, "seed", "99");
  EXPECT_EQ(c.synth.seed, 99u);
  EXPECT_EQ(c.train.seed, 99u);
}

TEST(RunConfig, UnknownKeyNamed) {
  RunConfig c;
  try {
    apply_value(c, "lamda", "1");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("lamda"), std::string::npos);
  }
}

TEST(RunConfig, MistypedValuesRejected) {
  RunConfig c;
  EXPECT_THROW(apply_value(c, "epochs", "-3"), ConfigError);
  EXPECT_THROW(apply_value(c, "epochs", "2.5"), ConfigError);
  EXPECT_THROW(apply_value(c, "adversary", "1"), ConfigError);
  EXPECT_THROW(apply_value(c, "aggregator", "median"), ConfigError);
  EXPECT_THROW(apply_value(c, "tile_kind", "video"), ConfigError);
  EXPECT_THROW(apply_json(c, "[1,2]"), ConfigError);
  EXPECT_THROW(apply_json(c, "{broken"), ConfigError);
}

TEST(RunConfig, NullWorldSeedClears) {
  RunConfig c;
  apply_value(c, "world_seed", "5");
  apply_value(c, "world_seed", "null");
  EXPECT_FALSE(c.synth.world_seed.has_value());
}

TEST(RunConfig, FileOverlay) {
  const auto p = std::filesystem::temp_directory_path() / "mcmil_run_config_test.json";
  {
    std::ofstream out(p);
    out << R"({"tau": 2.5, "folds": 3, "adversary": false})";
  }
  RunConfig c;
  apply_file(c, p);
  EXPECT_EQ(c.train.tau, 2.5);
  EXPECT_EQ(c.train.folds, 3u);
  EXPECT_FALSE(c.train.adversary);
  std::filesystem::remove(p);
}

TEST(TrainConfig, ValidateRejectsBadSign) {
  TrainConfig t;
  t.mi_sign = 0.5;
  EXPECT_THROW(t.validate(), ConfigError);
}
