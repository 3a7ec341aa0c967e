// SPDX-License-Identifier: Apache-2.0
#include "mcmil/encoder/cavit.hpp"

#include <cmath>

#include "mcmil/error.hpp"

namespace mcmil::encoder {

namespace {
const char* kPatchW = "enc.patch.w";
const char* kPatchB = "enc.patch.b";
const char* kCls = "enc.cls";
const char* kPos = "enc.pos";
}  // namespace

void CaVitConfig::validate() const {
  if (patch_size == 0 || side == 0 || side % patch_size != 0) {
    throw ConfigError("cavit: side " + std::to_string(side) + " not divisible by patch size " +
                      std::to_string(patch_size));
  }
  if (depth == 0) throw ConfigError("cavit: depth must be >= 1");
  if (channels == 0 || mlp_ratio == 0) throw ConfigError("cavit: channels and mlp_ratio must be positive");
  if (heads * head_dim != dim) throw ConfigError("cavit: heads * head_dim must equal dim");
  if (cohorts == 0) throw ConfigError("cavit: at least one cohort required");
}

CaVitEncoder::CaVitEncoder(CaVitConfig config) : config_(config) {
  config_.validate();
  for (std::size_t l = 0; l < config_.depth; ++l) {
    attention::McaaConfig mc{config_.dim, config_.heads, config_.head_dim, config_.cohorts, 0};
    attn_.emplace_back(block_prefix(l) + ".attn", mc);
  }
}

std::string CaVitEncoder::block_prefix(std::size_t layer) const {
  return "enc.block." + std::to_string(layer);
}

void CaVitEncoder::init(ParameterSet& params, Rng& rng) const {
  const std::size_t d = config_.dim;
  const std::size_t hidden = config_.mlp_ratio * d;
  params.add(kPatchW, uniform_tensor(config_.patch_values(), d,
                                     1.0 / std::sqrt(static_cast<double>(config_.patch_values())), rng));
  params.add(kPatchB, Tensor(1, d));
  params.add(kCls, normal_tensor(1, d, 0.02, rng));
  params.add(kPos, normal_tensor(config_.num_patches() + 1, d, 0.02, rng));
  for (std::size_t l = 0; l < config_.depth; ++l) {
    const std::string p = block_prefix(l);
    attn_[l].init(params, rng);
    params.add(p + ".ln1.g", Tensor(1, d, 1.0));
    params.add(p + ".ln1.b", Tensor(1, d));
    params.add(p + ".ln2.g", Tensor(1, d, 1.0));
    params.add(p + ".ln2.b", Tensor(1, d));
    params.add(p + ".mlp.w1", uniform_tensor(d, hidden, 1.0 / std::sqrt(static_cast<double>(d)), rng));
    params.add(p + ".mlp.b1", Tensor(1, hidden));
    params.add(p + ".mlp.w2", uniform_tensor(hidden, d, 1.0 / std::sqrt(static_cast<double>(hidden)), rng));
    params.add(p + ".mlp.b2", Tensor(1, d));
  }
}

Tensor CaVitEncoder::extract_patches(const Tensor& pixels) const {
  const std::size_t C = config_.channels, S = config_.side, P = config_.patch_size;
  if (pixels.shape() != std::vector<std::size_t>{C, S, S}) {
    throw ShapeError("patch_embed: tile " + pixels.shape_string() + " does not match [" +
                     std::to_string(C) + "x" + std::to_string(S) + "x" + std::to_string(S) + "]");
  }
  const std::size_t grid = S / P;
  Tensor out(grid * grid, C * P * P);
  for (std::size_t gy = 0; gy < grid; ++gy) {
    for (std::size_t gx = 0; gx < grid; ++gx) {
      const std::size_t row = gy * grid + gx;
      std::size_t col = 0;
      for (std::size_t ch = 0; ch < C; ++ch)
        for (std::size_t py = 0; py < P; ++py)
          for (std::size_t px = 0; px < P; ++px)
            out(row, col++) = pixels[(ch * S + gy * P + py) * S + gx * P + px];
    }
  }
  return out;
}

Var CaVitEncoder::patch_embed(Graph& g, const ParameterSet& params, const TileImage& tile) const {
  Var patches = g.constant(extract_patches(tile.pixels));
  Var proj = g.add_row(g.matmul(patches, g.param(params, kPatchW)), g.param(params, kPatchB));
  Var tokens = g.concat_rows({g.param(params, kCls), proj});
  return g.add(tokens, g.param(params, kPos));
}

Var CaVitEncoder::block(Graph& g, const ParameterSet& params, std::size_t layer, Var tokens,
                        CohortId c, QueryMode mode, attention::McaaTrace* trace) const {
  if (g.value(tokens).cols() != config_.dim) {
    throw ShapeError("cavit_block: tokens have " + std::to_string(g.value(tokens).cols()) +
                     " columns, expected " + std::to_string(config_.dim));
  }
  const std::string p = block_prefix(layer);
  Var attn = attn_.at(layer).forward(g, params, tokens, c, mode, trace);
  Var y = g.layer_norm_rows(g.add(tokens, attn), g.param(params, p + ".ln1.g"), g.param(params, p + ".ln1.b"));
  Var h = g.gelu(g.add_row(g.matmul(y, g.param(params, p + ".mlp.w1")), g.param(params, p + ".mlp.b1")));
  Var mlp = g.add_row(g.matmul(h, g.param(params, p + ".mlp.w2")), g.param(params, p + ".mlp.b2"));
  return g.layer_norm_rows(g.add(y, mlp), g.param(params, p + ".ln2.g"), g.param(params, p + ".ln2.b"));
}

Var CaVitEncoder::encode(Graph& g, const ParameterSet& params, const TileImage& tile, QueryMode mode) const {
  if (mode == QueryMode::CohortAware) check_cohort(tile.cohort, config_.cohorts);
  Var x = patch_embed(g, params, tile);
  for (std::size_t l = 0; l < config_.depth; ++l) x = block(g, params, l, x, tile.cohort, mode);
  return g.slice_rows(x, 0, 1);
}

Tensor CaVitEncoder::encode_tile(const ParameterSet& params, const TileImage& tile, QueryMode mode) const {
  Graph g;
  return g.value(encode(g, params, tile, mode));
}

}  // namespace mcmil::encoder
