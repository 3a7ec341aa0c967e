// SPDX-License-Identifier: Apache-2.0
#include "mcmil/data/dataset.hpp"

#include <cmath>
#include <set>
#include <unordered_set>

#include "mcmil/error.hpp"

namespace mcmil::data {

std::string patient_key(const Bag& bag) {
  return std::to_string(bag.cohort.value) + "/" + bag.patient_id;
}

void Dataset::validate() const {
  if (cohorts == 0) throw ConfigError("dataset: cohort count must be positive");
  if (classes < 2) throw ConfigError("dataset: at least two classes required");
  if (geometry.values_per_tile() == 0) throw ConfigError("dataset: empty tile geometry");
  std::unordered_set<std::string> slides;
  const std::size_t vpt = geometry.values_per_tile();
  for (const Bag& b : bags) {
    if (!slides.insert(b.slide_id).second) throw ConfigError("dataset: duplicate slide id '" + b.slide_id + "'");
    if (b.cohort.value >= cohorts) {
      throw ConfigError("dataset: slide '" + b.slide_id + "' has cohort " + std::to_string(b.cohort.value) +
                        " but the manifest declares " + std::to_string(cohorts));
    }
    if (b.label >= classes) {
      throw ConfigError("dataset: slide '" + b.slide_id + "' has label " + std::to_string(b.label) +
                        " outside " + std::to_string(classes) + " classes");
    }
    if (b.num_tiles == 0) throw ConfigError("dataset: slide '" + b.slide_id + "' has no tiles");
    if (b.tiles.size() != b.num_tiles * vpt) {
      throw ConfigError("dataset: slide '" + b.slide_id + "' tile payload has wrong size");
    }
    if (!b.tile_labels.empty() && b.tile_labels.size() != b.num_tiles) {
      throw ConfigError("dataset: slide '" + b.slide_id + "' tile label count mismatch");
    }
    if (!std::isfinite(b.weight) || b.weight < 0.0) {
      throw ConfigError("dataset: slide '" + b.slide_id + "' has invalid weight");
    }
  }
}

std::size_t Dataset::num_tiles() const {
  std::size_t n = 0;
  for (const Bag& b : bags) n += b.num_tiles;
  return n;
}

std::vector<std::string> Dataset::patients() const {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const Bag& b : bags) {
    std::string key = patient_key(b);
    if (seen.insert(key).second) out.push_back(std::move(key));
  }
  return out;
}

diff::Tensor bag_features(const Bag& bag, const TileGeometry& geometry) {
  if (geometry.kind != TileKind::Feature) throw ConfigError("bag_features: dataset holds images, not features");
  const std::size_t d = geometry.feature_dim;
  diff::Tensor t(bag.num_tiles, d);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(bag.tiles[i]);
  return t;
}

diff::Tensor bag_features(const Bag& bag, const TileGeometry& geometry, const std::vector<std::size_t>& tiles) {
  if (geometry.kind != TileKind::Feature) throw ConfigError("bag_features: dataset holds images, not features");
  const std::size_t d = geometry.feature_dim;
  diff::Tensor t(tiles.size(), d);
  for (std::size_t r = 0; r < tiles.size(); ++r) {
    if (tiles[r] >= bag.num_tiles) throw ConfigError("bag_features: tile index out of range");
    for (std::size_t j = 0; j < d; ++j) t(r, j) = static_cast<double>(bag.tiles[tiles[r] * d + j]);
  }
  return t;
}

encoder::TileImage bag_tile(const Bag& bag, const TileGeometry& geometry, std::size_t tile) {
  if (geometry.kind != TileKind::Image) throw ConfigError("bag_tile: dataset holds features, not images");
  if (tile >= bag.num_tiles) throw ConfigError("bag_tile: tile index out of range");
  const std::size_t vpt = geometry.values_per_tile();
  std::vector<double> px(vpt);
  for (std::size_t i = 0; i < vpt; ++i) px[i] = static_cast<double>(bag.tiles[tile * vpt + i]);
  return {diff::Tensor({geometry.channels, geometry.side, geometry.side}, std::move(px)), bag.cohort};
}

std::vector<std::vector<std::size_t>> slide_counts(const Dataset& dataset) {
  std::vector<std::vector<std::size_t>> counts(dataset.cohorts, std::vector<std::size_t>(dataset.classes, 0));
  for (const Bag& b : dataset.bags) ++counts.at(b.cohort.value).at(b.label);
  return counts;
}

}  // namespace mcmil::data
