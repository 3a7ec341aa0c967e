// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <ostream>
#include <string>
#include <vector>

#include "mcmil/types.hpp"

namespace mcmil::balance {

/// One slide as seen by the weighting hierarchy.
struct HierarchyRecord {
  CohortId cohort;
  std::string slide_id;
  std::size_t label = 0;
  std::size_t tiles = 1;
};

/// Per-tile weights, flattened in record order (all tiles of record 0, then
/// record 1, ...): (1/#cohorts) (1/#slides in cohort) (1/#tiles in slide).
std::vector<double> pretrain_weights(const std::vector<HierarchyRecord>& records);

/// The per-tile weight of each record (every tile of a slide shares it).
std::vector<double> pretrain_slide_tile_weights(const std::vector<HierarchyRecord>& records);

/// Per-slide weights: (1/#(cohort, class) combinations present)
/// (1/#slides in the combination).
std::vector<double> mil_weights(const std::vector<HierarchyRecord>& records);

/// Clamp to [max(mean - 2 sd, 0), mean + 2 sd] with population mean and sd
/// taken once over the input.
std::vector<double> clip_weights(const std::vector<double>& weights);

/// Rescale to unit mean.
std::vector<double> batch_renormalize(const std::vector<double>& weights);

/// Audit table: one "sample_id raw clipped" row per sample, tab separated.
void write_weight_table(std::ostream& out, const std::vector<std::string>& ids,
                        const std::vector<double>& raw, const std::vector<double>& clipped);

}  // namespace mcmil::balance
