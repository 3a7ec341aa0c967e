// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mcmil/diff/tensor.hpp"
#include "mcmil/types.hpp"

namespace mcmil::train {

struct ProbeConfig {
  double train_fraction = 0.7;
  /// Stop when the gradient's max-abs entry falls below this.
  double tolerance = 1e-6;
  std::size_t max_iterations = 5000;
  /// Ridge penalty; keeps separable problems bounded.
  double l2 = 1e-4;
  std::uint64_t seed = 0;
};

struct ProbeResult {
  double auc = 0.5;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  std::size_t iterations = 0;
  bool converged = false;
};

/// Fits a multinomial logistic regression from representations (N x d) to
/// cohort on a cohort-stratified `train_fraction` split of standardized
/// features, by gradient descent with backtracking. Returns the macro
/// one-vs-rest AUC on the held-out part. Throws ConfigError when fewer than
/// two cohorts are present.
ProbeResult cohort_probe(const diff::Tensor& representations, const std::vector<CohortId>& cohorts,
                         std::size_t k, const ProbeConfig& config = {});

}  // namespace mcmil::train
