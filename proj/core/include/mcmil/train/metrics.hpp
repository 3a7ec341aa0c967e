// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mcmil/types.hpp"

namespace mcmil::train {

/// Mann-Whitney AUC: the fraction of (positive, negative) pairs ranked
/// correctly, tied pairs counting one half. nullopt when either class is
/// absent.
std::optional<double> auc(const std::vector<double>& scores, const std::vector<int>& positive);

/// Mean of the one-vs-rest AUCs of the classes for which it is defined;
/// `probabilities[i][c]` scores sample i for class c.
std::optional<double> macro_ovr_auc(const std::vector<std::vector<double>>& probabilities,
                                    const std::vector<std::size_t>& labels, std::size_t classes);

/// Mean per-class recall of `predicted`. nullopt when a class has no samples.
std::optional<double> balanced_accuracy(const std::vector<std::size_t>& predicted,
                                        const std::vector<std::size_t>& labels, std::size_t classes);

std::size_t argmax(const std::vector<double>& v);

/// One scored slide.
struct SlidePrediction {
  std::string patient_key;
  CohortId cohort;
  std::size_t label = 0;
  std::vector<double> probabilities;
};

/// Patient-level reduction: the mean of a patient's slide probabilities.
/// Patients appear in first-seen order.
std::vector<SlidePrediction> patient_level(const std::vector<SlidePrediction>& slides);

struct MetricsReport {
  std::size_t patients = 0;
  std::optional<double> auc;
  std::optional<double> balanced_accuracy;
  std::map<std::size_t, std::optional<double>> cohort_auc;
  std::map<std::size_t, std::optional<double>> cohort_balanced_accuracy;
  std::optional<double> probe_auc;
  double loss_mil = 0.0;
  double loss_mi = 0.0;
  double loss_total = 0.0;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

/// Patient-level AUC and balanced accuracy, overall and per cohort.
MetricsReport compute_metrics(const std::vector<SlidePrediction>& slides, std::size_t classes,
                              std::size_t cohorts);

}  // namespace mcmil::train
