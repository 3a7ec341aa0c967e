// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "mcmil/data/dataset.hpp"

namespace mcmil::data {

/// Synthetic multi-cohort MIL generator settings.
///
/// Every tile is noise. Bags of class y >= 1 carry witness tiles stamped
/// with a shared class motif (`shared_signal`) and a motif specific to the
/// bag's cohort and class (`cohort_signal`). Class-0 bags may carry decoy
/// tiles: another cohort's witness motif, which means nothing in this
/// cohort. `cohort_style` adds a cohort-wide offset to every tile, the kind
/// of acquisition bias an MI regularizer should remove. Per-cohort class
/// priors are `(1 - bias) * class_priors[c] + bias * onehot(c mod m)`.
struct SynthConfig {
  std::size_t cohorts = 2;
  std::size_t classes = 2;
  /// One entry per cohort, or a single entry applied to every cohort.
  std::vector<std::size_t> patients_per_cohort = {40};
  std::size_t slides_per_patient = 1;
  std::size_t min_tiles = 8;
  std::size_t max_tiles = 16;
  TileGeometry geometry;
  /// Side of the stamped motif in image mode.
  std::size_t motif_size = 4;

  double shared_signal = 1.0;
  double cohort_signal = 0.0;
  double bias = 0.0;
  /// Per-cohort class priors (cohorts x classes); empty means uniform.
  std::vector<std::vector<double>> class_priors;
  double witness_fraction = 0.25;
  double decoy_fraction = 0.0;
  double cohort_style = 0.0;
  double slide_noise = 0.0;
  double tile_noise = 1.0;

  std::uint64_t seed = 0;
  /// Seed of the motifs and styles; `seed` when unset. Two configs sharing it
  /// sample different patients from the same world.
  std::optional<std::uint64_t> world_seed;

  void validate() const;
  std::size_t patients_in(std::size_t cohort) const;
  /// Effective p(class | cohort) after mixing in the bias.
  std::vector<std::vector<double>> effective_priors() const;
};

/// Deterministic given `config.seed`; each patient draws from its own
/// splitmix-derived stream.
Dataset generate(const SynthConfig& config);

}  // namespace mcmil::data
