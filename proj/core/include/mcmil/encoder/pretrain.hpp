// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mcmil/data/dataset.hpp"
#include "mcmil/diff/adam.hpp"
#include "mcmil/encoder/cavit.hpp"

namespace mcmil::encoder {

struct PretrainConfig {
  std::size_t epochs = 5;
  std::size_t batch_size = 32;
  diff::AdamConfig adam{};
  std::uint64_t seed = 0;
  QueryMode mode = QueryMode::CohortAware;
  /// Clip the epoch's tile weights to two standard deviations.
  bool clip = true;
};

struct PretrainResult {
  EncoderParams encoder;
  /// Linear tile classifier used only during pretraining ("enc_head.w/b").
  ParameterSet head;
  /// Mean weighted tile loss per epoch.
  std::vector<double> loss_curve;
};

/// Freshly initialized encoder; pretrain_encoder starts from exactly this.
EncoderParams init_encoder(const CaVitConfig& config, QueryMode mode, std::uint64_t seed);

/// Supervised pretraining on the tiles' proxy labels with weighted
/// cross-entropy. Tile weight = hierarchical pretraining weight times the
/// slide's own weight; weights are clipped over the epoch and renormalized
/// per batch, and batches whose weights are all zero are skipped.
/// `bags` selects the training slides (all slides when empty).
PretrainResult pretrain_encoder(const data::Dataset& dataset, const CaVitConfig& config,
                                const PretrainConfig& options, const std::vector<std::size_t>& bags = {});

/// Replace every image tile by its encoder feature; the result is a feature
/// dataset with the same bags, labels and weights.
data::Dataset encode_dataset(const data::Dataset& images, const EncoderParams& encoder);

}  // namespace mcmil::encoder
