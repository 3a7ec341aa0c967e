// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mcmil/attention/cohort_attention.hpp"
#include "mcmil/diff/graph.hpp"
#include "mcmil/types.hpp"

namespace mcmil::encoder {

using attention::QueryMode;
using diff::Graph;
using diff::ParameterSet;
using diff::Tensor;
using diff::Var;

/// One tile: pixels as a channels x side x side tensor plus its cohort.
struct TileImage {
  Tensor pixels;
  CohortId cohort;
};

struct CaVitConfig {
  std::size_t channels = 1;
  std::size_t side = 16;
  std::size_t patch_size = 4;
  std::size_t dim = 32;
  std::size_t depth = 2;
  std::size_t heads = 4;
  std::size_t head_dim = 8;
  std::size_t mlp_ratio = 2;
  std::size_t cohorts = 2;

  void validate() const;
  std::size_t num_patches() const { return (side / patch_size) * (side / patch_size); }
  std::size_t patch_values() const { return channels * patch_size * patch_size; }
};

/// Cohort-Aware ViT tile encoder: patch embedding with a class token and
/// learned positional embeddings, `depth` post-norm blocks
/// (x -> LN(x + MCAA(x, c)) -> LN(y + MLP(y))), class-token output.
///
/// Running the same parameters with QueryMode::DatasetOnly gives the plain
/// ViT baseline.
class CaVitEncoder {
 public:
  explicit CaVitEncoder(CaVitConfig config);

  void init(ParameterSet& params, Rng& rng) const;

  /// (n+1) x d token matrix; row 0 is the class token.
  Var patch_embed(Graph& g, const ParameterSet& params, const TileImage& tile) const;
  Var block(Graph& g, const ParameterSet& params, std::size_t layer, Var tokens, CohortId c,
            QueryMode mode, attention::McaaTrace* trace = nullptr) const;
  /// 1 x d class-token feature after all blocks.
  Var encode(Graph& g, const ParameterSet& params, const TileImage& tile, QueryMode mode) const;

  /// Forward-only feature vector (1 x d).
  Tensor encode_tile(const ParameterSet& params, const TileImage& tile, QueryMode mode) const;

  const CaVitConfig& config() const { return config_; }
  const attention::MultiheadCohortAttention& attention(std::size_t layer) const {
    return attn_.at(layer);
  }
  std::string block_prefix(std::size_t layer) const;

  /// n x (C p^2) matrix of flattened, non-overlapping patches in row-major
  /// grid order; each patch is flattened channel-major.
  Tensor extract_patches(const Tensor& pixels) const;

 private:
  CaVitConfig config_;
  std::vector<attention::MultiheadCohortAttention> attn_;
};

/// Encoder architecture plus its trained parameters.
struct EncoderParams {
  CaVitConfig config;
  ParameterSet params;
  QueryMode mode = QueryMode::CohortAware;
};

}  // namespace mcmil::encoder
