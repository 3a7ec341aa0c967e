// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mcmil/diff/tensor.hpp"
#include "mcmil/encoder/cavit.hpp"
#include "mcmil/types.hpp"

namespace mcmil::data {

enum class TileKind { Feature, Image };

/// Layout of one tile's values: a d-vector, or a channels x side x side image.
struct TileGeometry {
  TileKind kind = TileKind::Feature;
  std::size_t feature_dim = 32;
  std::size_t channels = 1;
  std::size_t side = 16;

  std::size_t values_per_tile() const {
    return kind == TileKind::Feature ? feature_dim : channels * side * side;
  }
  friend bool operator==(const TileGeometry&, const TileGeometry&) = default;
};

/// One slide: its tiles and slide-level annotations. Tile values are kept
/// as 32-bit floats, the on-disk precision, so file round trips are exact.
struct Bag {
  std::string slide_id;
  std::string patient_id;
  CohortId cohort;
  std::size_t label = 0;
  std::size_t num_tiles = 0;
  std::vector<float> tiles;             // num_tiles * values_per_tile
  std::vector<std::int32_t> tile_labels;  // per-tile proxy label (0 = background)
  double weight = 1.0;

  friend bool operator==(const Bag&, const Bag&) = default;
};

struct Dataset {
  std::size_t cohorts = 0;
  std::size_t classes = 0;
  TileGeometry geometry;
  std::vector<Bag> bags;

  /// Throws ConfigError on any violated invariant (ids, ranges, sizes).
  void validate() const;

  std::size_t num_tiles() const;
  /// Distinct patient keys ("<cohort>/<patient_id>") in first-seen order.
  std::vector<std::string> patients() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Patient identity is scoped by cohort.
std::string patient_key(const Bag& bag);

/// Tile rows of a feature bag as an n x d tensor.
diff::Tensor bag_features(const Bag& bag, const TileGeometry& geometry);
/// Same, restricted to the listed tile indices.
diff::Tensor bag_features(const Bag& bag, const TileGeometry& geometry,
                          const std::vector<std::size_t>& tiles);

/// One tile of an image bag.
encoder::TileImage bag_tile(const Bag& bag, const TileGeometry& geometry, std::size_t tile);

/// Counts per (cohort, class), row-major [cohort][class].
std::vector<std::vector<std::size_t>> slide_counts(const Dataset& dataset);

}  // namespace mcmil::data
