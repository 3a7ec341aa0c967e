// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <compare>
#include <cstddef>
#include <string>

#include "mcmil/error.hpp"

namespace mcmil {

/// 0-based cohort index in {0, ..., k-1}.
struct CohortId {
  std::size_t value = 0;

  friend auto operator<=>(const CohortId&, const CohortId&) = default;
};

inline void check_cohort(CohortId c, std::size_t cohorts) {
  if (c.value >= cohorts) {
    throw ConfigError("cohort id " + std::to_string(c.value) + " out of range for " +
                      std::to_string(cohorts) + " cohorts");
  }
}

}  // namespace mcmil
