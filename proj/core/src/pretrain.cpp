// SPDX-License-Identifier: Apache-2.0
#include "mcmil/encoder/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "mcmil/balance/weights.hpp"
#include "mcmil/error.hpp"
#include "mcmil/mil/mil.hpp"
#include "mcmil/util/rng.hpp"

namespace mcmil::encoder {

namespace {

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kHeadStream = 2;
constexpr std::uint64_t kShuffleStream = 3;

struct TileRef {
  std::size_t bag;
  std::size_t tile;
  double weight;
};

}  // namespace

EncoderParams init_encoder(const CaVitConfig& config, QueryMode mode, std::uint64_t seed) {
  EncoderParams ep{config, {}, mode};
  CaVitEncoder enc(config);
  Rng rng(derive_seed(seed, kInitStream));
  enc.init(ep.params, rng);
  return ep;
}

PretrainResult pretrain_encoder(const data::Dataset& dataset, const CaVitConfig& config,
                                const PretrainConfig& options, const std::vector<std::size_t>& bags) {
  if (dataset.geometry.kind != data::TileKind::Image) throw ConfigError("pretrain: dataset holds features, not images");
  if (dataset.geometry.channels != config.channels || dataset.geometry.side != config.side) {
    throw ConfigError("pretrain: tile geometry does not match the encoder configuration");
  }
  if (options.batch_size == 0) throw ConfigError("pretrain: batch_size must be positive");
  std::vector<std::size_t> selected = bags;
  if (selected.empty()) {
    selected.resize(dataset.bags.size());
    std::iota(selected.begin(), selected.end(), 0);
  }
  if (selected.empty()) throw ConfigError("pretrain: empty dataset");

  std::vector<balance::HierarchyRecord> records;
  std::set<std::int32_t> labels;
  for (std::size_t b : selected) {
    const data::Bag& bag = dataset.bags.at(b);
    records.push_back({bag.cohort, bag.slide_id, bag.label, bag.num_tiles});
    if (bag.tile_labels.size() != bag.num_tiles) throw ConfigError("pretrain: slide '" + bag.slide_id + "' lacks tile labels");
    labels.insert(bag.tile_labels.begin(), bag.tile_labels.end());
  }
  if (labels.size() < 2) throw ConfigError("pretrain: every tile has the same proxy label");
  const auto classes = static_cast<std::size_t>(*labels.rbegin()) + 1;
  if (*labels.begin() < 0) throw ConfigError("pretrain: negative proxy label");

  const auto per_tile = balance::pretrain_slide_tile_weights(records);
  std::vector<TileRef> tiles;
  for (std::size_t r = 0; r < selected.size(); ++r) {
    const data::Bag& bag = dataset.bags[selected[r]];
    for (std::size_t t = 0; t < bag.num_tiles; ++t) tiles.push_back({selected[r], t, per_tile[r] * bag.weight});
  }
  if (options.clip && tiles.size() >= 2) {
    std::vector<double> w(tiles.size());
    for (std::size_t i = 0; i < tiles.size(); ++i) w[i] = tiles[i].weight;
    w = balance::clip_weights(w);
    for (std::size_t i = 0; i < tiles.size(); ++i) tiles[i].weight = w[i];
  }

  PretrainResult result;
  result.encoder = init_encoder(config, options.mode, options.seed);
  {
    Rng rng(derive_seed(options.seed, kHeadStream));
    result.head.add("enc_head.w", uniform_tensor(config.dim, classes, 1.0 / std::sqrt(static_cast<double>(config.dim)), rng));
    result.head.add("enc_head.b", diff::Tensor(1, classes));
  }
  CaVitEncoder enc(config);
  diff::Adam enc_opt(options.adam), head_opt(options.adam);
  Rng shuffle(derive_seed(options.seed, kShuffleStream));

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(tiles.begin(), tiles.end(), shuffle);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < tiles.size(); start += options.batch_size) {
      const std::size_t end = std::min(tiles.size(), start + options.batch_size);
      std::vector<double> w;
      for (std::size_t i = start; i < end; ++i) w.push_back(tiles[i].weight);
      if (std::all_of(w.begin(), w.end(), [](double v) { return v == 0.0; })) continue;
      w = balance::batch_renormalize(w);

      diff::Graph g;
      std::vector<diff::Var> feats;
      std::vector<std::size_t> y;
      for (std::size_t i = start; i < end; ++i) {
        const data::Bag& bag = dataset.bags[tiles[i].bag];
        feats.push_back(enc.encode(g, result.encoder.params, data::bag_tile(bag, dataset.geometry, tiles[i].tile),
                                   options.mode));
        y.push_back(static_cast<std::size_t>(bag.tile_labels[tiles[i].tile]));
      }
      diff::Var z = feats.size() == 1 ? feats[0] : g.concat_rows(feats);
      diff::Var logits = g.add_row(g.matmul(z, g.param(result.head, "enc_head.w")), g.param(result.head, "enc_head.b"));
      diff::Var loss = mil::weighted_cross_entropy(g, logits, y, w);
      loss_sum += g.value(loss)[0];
      ++batches;
      g.backward(loss);
      enc_opt.step(result.encoder.params, g.param_gradients(result.encoder.params));
      head_opt.step(result.head, g.param_gradients(result.head));
    }
    result.loss_curve.push_back(batches ? loss_sum / static_cast<double>(batches) : 0.0);
  }
  return result;
}

data::Dataset encode_dataset(const data::Dataset& images, const EncoderParams& encoder) {
  if (images.geometry.kind != data::TileKind::Image) throw ConfigError("encode: dataset holds features, not images");
  CaVitEncoder enc(encoder.config);
  data::Dataset out;
  out.cohorts = images.cohorts;
  out.classes = images.classes;
  out.geometry.kind = data::TileKind::Feature;
  out.geometry.feature_dim = encoder.config.dim;
  out.bags.reserve(images.bags.size());
  const std::size_t d = encoder.config.dim;
  for (const data::Bag& b : images.bags) {
    data::Bag f = b;
    f.tiles.assign(b.num_tiles * d, 0.0F);
    for (std::size_t t = 0; t < b.num_tiles; ++t) {
      const diff::Tensor z = enc.encode_tile(encoder.params, data::bag_tile(b, images.geometry, t), encoder.mode);
      for (std::size_t j = 0; j < d; ++j) f.tiles[t * d + j] = static_cast<float>(z[j]);
    }
    out.bags.push_back(std::move(f));
  }
  return out;
}

}  // namespace mcmil::encoder
