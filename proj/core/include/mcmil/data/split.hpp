// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mcmil/data/dataset.hpp"

namespace mcmil::data {

/// One cross-validation fold as bag indices into the dataset, plus the
/// patient keys behind each partition.
struct FoldSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  std::vector<std::string> train_patients;
  std::vector<std::string> val_patients;
  std::vector<std::string> test_patients;
};

/// Patient-level K-fold stratified by (cohort, class). A patient's stratum
/// comes from its first slide. `val_fraction` of each fold's training
/// patients move to validation, allocated across strata by largest
/// remainder. Throws ConfigError when a stratum has fewer patients than
/// folds.
std::vector<FoldSplit> stratified_patient_kfold(const Dataset& dataset, std::size_t folds,
                                                std::uint64_t seed, double val_fraction = 0.1);

}  // namespace mcmil::data
