// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "mcmil/data/io.hpp"
#include "mcmil/data/split.hpp"
#include "mcmil/data/synth.hpp"
#include "mcmil/error.hpp"

using namespace mcmil;
using namespace mcmil::data;
namespace fs = std::filesystem;

namespace {

SynthConfig small(std::uint64_t seed) {
  SynthConfig s;
  s.cohorts = 3;
  s.classes = 2;
  s.patients_per_cohort = {20, 15, 25};
  s.slides_per_patient = 2;
  s.min_tiles = 3;
  s.max_tiles = 7;
  s.geometry.feature_dim = 6;
  s.seed = seed;
  return s;
}

// Enough patients that every (cohort, class) stratum fills five folds.
SynthConfig splittable(std::uint64_t seed) {
  SynthConfig s = small(seed);
  s.patients_per_cohort = {40};
  return s;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("mcmil_test_" + tag + "_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST(Synth, DeterministicPerSeed) {
  EXPECT_EQ(generate(small(4)), generate(small(4)));
  EXPECT_FALSE(generate(small(4)) == generate(small(5)));
}

TEST(Synth, CountsFollowConfig) {
  const Dataset d = generate(small(1));
  EXPECT_NO_THROW(d.validate());
  EXPECT_EQ(d.bags.size(), (20 + 15 + 25) * 2u);
  EXPECT_EQ(d.patients().size(), 60u);
  std::size_t tiles = 0;
  for (const auto& b : d.bags) {
    EXPECT_GE(b.num_tiles, 3u);
    EXPECT_LE(b.num_tiles, 7u);
    EXPECT_EQ(b.tiles.size(), b.num_tiles * 6);
    EXPECT_EQ(b.tile_labels.size(), b.num_tiles);
    tiles += b.num_tiles;
  }
  EXPECT_EQ(d.num_tiles(), tiles);
  const auto counts = slide_counts(d);
  EXPECT_EQ(counts[1][0] + counts[1][1], 30u);
}

TEST(Synth, SlidesOfAPatientShareTheLabel) {
  const Dataset d = generate(small(2));
  std::map<std::string, std::size_t> label;
  for (const auto& b : d.bags) {
    auto [it, fresh] = label.emplace(patient_key(b), b.label);
    if (!fresh) {
      EXPECT_EQ(it->second, b.label);
    }
  }
}

TEST(Synth, BiasMixesOneHotIntoPriors) {
  SynthConfig s = small(0);
  s.bias = 0.5;
  const auto p = s.effective_priors();
  ASSERT_EQ(p.size(), 3u);
  EXPECT_DOUBLE_EQ(p[0][0], 0.75);
  EXPECT_DOUBLE_EQ(p[1][1], 0.75);
  EXPECT_DOUBLE_EQ(p[2][0], 0.75);
}

TEST(Synth, ImageTilesHaveImageGeometry) {
  SynthConfig s = small(3);
  s.geometry.kind = TileKind::Image;
  s.geometry.channels = 2;
  s.geometry.side = 8;
  const Dataset d = generate(s);
  EXPECT_EQ(d.bags[0].tiles.size(), d.bags[0].num_tiles * 128);
  const auto tile = bag_tile(d.bags[0], d.geometry, 0);
  EXPECT_EQ(tile.pixels.shape(), (std::vector<std::size_t>{2, 8, 8}));
}

TEST(Synth, InvalidConfigRejected) {
  SynthConfig s = small(0);
  s.min_tiles = 9;
  EXPECT_THROW(generate(s), ConfigError);
  s = small(0);
  s.patients_per_cohort = {1, 2};
  EXPECT_THROW(generate(s), ConfigError);
}

TEST(DatasetValidate, RejectsOutOfRangeLabel) {
  Dataset d = generate(small(1));
  d.bags[3].label = 2;
  EXPECT_THROW(d.validate(), ConfigError);
}

TEST(PatientKey, ScopedByCohort) {
  Bag a, b;
  a.patient_id = b.patient_id = "p1";
  a.cohort = CohortId{0};
  b.cohort = CohortId{1};
  EXPECT_NE(patient_key(a), patient_key(b));
}

TEST(DatasetIo, RoundTripIsExact) {
  TempDir t("roundtrip");
  const Dataset d = generate(small(7));
  write_dataset(d, t.path);
  EXPECT_EQ(read_dataset(t.path), d);
  EXPECT_EQ(read_dataset(t.path / kManifestName), d);
}

TEST(DatasetIo, TruncatedPayloadIsParseError) {
  TempDir t("trunc");
  write_dataset(generate(small(7)), t.path);
  const auto payload = t.path / kPayloadName;
  fs::resize_file(payload, fs::file_size(payload) - 4);
  EXPECT_THROW(read_dataset(t.path), ParseError);
}

TEST(DatasetIo, MalformedManifestNamesTheLine) {
  TempDir t("malformed");
  write_dataset(generate(small(7)), t.path);
  {
    std::ofstream out(t.path / kManifestName, std::ios::app);
    out << "{\"slide_id\": \n";
  }
  try {
    read_dataset(t.path);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line"), std::string::npos) << e.what();
  }
}

TEST(DatasetIo, MissingDirectoryIsIoError) {
  EXPECT_THROW(read_dataset(fs::temp_directory_path() / "mcmil_definitely_missing_dir"), IoError);
}

// Patient-level folds: disjoint partitions, every patient tested exactly once.
TEST(Split, PatientLevelFoldProperties) {
  const Dataset d = generate(splittable(9));
  const auto folds = stratified_patient_kfold(d, 5, 3, 0.1);
  ASSERT_EQ(folds.size(), 5u);
  std::map<std::string, int> tested;
  for (const auto& f : folds) {
    std::set<std::string> tr(f.train_patients.begin(), f.train_patients.end()),
        va(f.val_patients.begin(), f.val_patients.end()), te(f.test_patients.begin(), f.test_patients.end());
    for (const auto& p : te) {
      EXPECT_FALSE(tr.count(p) || va.count(p)) << p;
      ++tested[p];
    }
    for (const auto& p : va) EXPECT_FALSE(tr.count(p)) << p;
    EXPECT_EQ(f.train.size() + f.val.size() + f.test.size(), d.bags.size());
    EXPECT_FALSE(f.val.empty());
    // Slides follow their patient.
    for (std::size_t i : f.test) EXPECT_TRUE(te.count(patient_key(d.bags[i])));
    for (std::size_t i : f.val) EXPECT_TRUE(va.count(patient_key(d.bags[i])));
  }
  EXPECT_EQ(tested.size(), d.patients().size());
  for (const auto& [p, n] : tested) EXPECT_EQ(n, 1) << p;
}

TEST(Split, TestFoldsAreStratified) {
  const Dataset d = generate(splittable(10));
  const auto folds = stratified_patient_kfold(d, 5, 1);
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> total;
  std::map<std::string, std::pair<std::size_t, std::size_t>> stratum;
  for (const auto& b : d.bags) stratum.emplace(patient_key(b), std::make_pair(b.cohort.value, b.label));
  for (const auto& [p, s] : stratum) ++total[s];
  for (const auto& f : folds) {
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> in;
    for (const auto& p : f.test_patients) ++in[stratum.at(p)];
    for (const auto& [s, n] : total) {
      EXPECT_GE(in[s], n / 5);
      EXPECT_LE(in[s], n / 5 + 1);
    }
  }
}

TEST(Split, DeterministicAndSeedDependent) {
  const Dataset d = generate(splittable(11));
  const auto a = stratified_patient_kfold(d, 5, 1), b = stratified_patient_kfold(d, 5, 1),
             c = stratified_patient_kfold(d, 5, 2);
  EXPECT_EQ(a[0].test, b[0].test);
  bool differs = false;
  for (std::size_t k = 0; k < 5; ++k) differs |= a[k].test != c[k].test;
  EXPECT_TRUE(differs);
}

TEST(Split, TooFewPatientsInStratumRejected) {
  SynthConfig s = small(0);
  s.patients_per_cohort = {3, 3, 3};
  EXPECT_THROW(stratified_patient_kfold(generate(s), 5, 0), ConfigError);
}
