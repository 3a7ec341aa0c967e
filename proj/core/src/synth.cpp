// SPDX-License-Identifier: Apache-2.0
#include "mcmil/data/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mcmil/error.hpp"
#include "mcmil/util/rng.hpp"

namespace mcmil::data {

namespace {

constexpr std::uint64_t kWorldStream = 0x574f524c44ULL;

std::vector<double> unit_vector(std::size_t d, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(d);
  double s = 0.0;
  for (double& x : v) {
    x = n(rng);
    s += x * x;
  }
  s = std::sqrt(s);
  for (double& x : v) x /= s;
  return v;
}

/// Fixed patterns shared by every bag of one generated dataset.
struct World {
  // Feature mode: unit directions in R^d. Image mode: motif_size^2 * channels
  // patterns with unit RMS (motifs) or full-tile patterns (styles).
  std::vector<std::vector<double>> shared;                // [class]
  std::vector<std::vector<std::vector<double>>> cohort;   // [cohort][class]
  std::vector<std::vector<double>> style;                 // [cohort]
};

std::vector<double> sign_pattern(std::size_t n, Rng& rng) {
  std::bernoulli_distribution coin(0.5);
  std::vector<double> v(n);
  for (double& x : v) x = coin(rng) ? 1.0 : -1.0;
  return v;
}

World make_world(const SynthConfig& cfg) {
  Rng rng(derive_seed(cfg.world_seed.value_or(cfg.seed), kWorldStream));
  World w;
  const bool image = cfg.geometry.kind == TileKind::Image;
  const std::size_t motif_len =
      image ? cfg.geometry.channels * cfg.motif_size * cfg.motif_size : cfg.geometry.feature_dim;
  auto motif = [&]() { return image ? sign_pattern(motif_len, rng) : unit_vector(motif_len, rng); };
  w.shared.resize(cfg.classes);
  for (std::size_t y = 1; y < cfg.classes; ++y) w.shared[y] = motif();
  w.cohort.assign(cfg.cohorts, std::vector<std::vector<double>>(cfg.classes));
  for (std::size_t c = 0; c < cfg.cohorts; ++c)
    for (std::size_t y = 1; y < cfg.classes; ++y) w.cohort[c][y] = motif();
  for (std::size_t c = 0; c < cfg.cohorts; ++c) {
    w.style.push_back(image ? unit_vector(cfg.geometry.values_per_tile(), rng) : unit_vector(motif_len, rng));
    if (image) {
      // Unit RMS per pixel rather than unit norm over the tile.
      const double s = std::sqrt(static_cast<double>(cfg.geometry.values_per_tile()));
      for (double& x : w.style.back()) x *= s;
    }
  }
  return w;
}

void add_scaled(std::vector<double>& tile, const std::vector<double>& v, double s) {
  for (std::size_t i = 0; i < v.size(); ++i) tile[i] += s * v[i];
}

/// Add a motif_size x motif_size pattern at grid cell `cell`.
void stamp(std::vector<double>& tile, const std::vector<double>& pattern, double s, std::size_t cell,
           const SynthConfig& cfg) {
  const std::size_t S = cfg.geometry.side, M = cfg.motif_size, C = cfg.geometry.channels;
  const std::size_t grid = S / M;
  const std::size_t oy = (cell / grid) * M, ox = (cell % grid) * M;
  std::size_t k = 0;
  for (std::size_t ch = 0; ch < C; ++ch)
    for (std::size_t y = 0; y < M; ++y)
      for (std::size_t x = 0; x < M; ++x) tile[(ch * S + oy + y) * S + ox + x] += s * pattern[k++];
}

}  // namespace

void SynthConfig::validate() const {
  if (cohorts == 0) throw ConfigError("synth: cohorts must be >= 1");
  if (classes < 2) throw ConfigError("synth: classes must be >= 2");
  if (patients_per_cohort.empty() ||
      (patients_per_cohort.size() != 1 && patients_per_cohort.size() != cohorts)) {
    throw ConfigError("synth: patients_per_cohort needs 1 or `cohorts` entries");
  }
  if (slides_per_patient == 0) throw ConfigError("synth: slides_per_patient must be >= 1");
  if (min_tiles == 0 || min_tiles > max_tiles) throw ConfigError("synth: need 1 <= min_tiles <= max_tiles");
  if (geometry.values_per_tile() == 0) throw ConfigError("synth: empty tile geometry");
  if (geometry.kind == TileKind::Image &&
      (motif_size == 0 || geometry.side % motif_size != 0)) {
    throw ConfigError("synth: motif_size must divide the tile side");
  }
  for (double s : {shared_signal, cohort_signal, cohort_style, slide_noise, tile_noise}) {
    if (!(s >= 0.0) || !std::isfinite(s)) throw ConfigError("synth: strengths and noise levels must be >= 0");
  }
  if (!(bias >= 0.0 && bias <= 1.0)) throw ConfigError("synth: bias must lie in [0, 1]");
  if (!(witness_fraction > 0.0 && witness_fraction <= 1.0)) {
    throw ConfigError("synth: witness_fraction must lie in (0, 1]");
  }
  if (!(decoy_fraction >= 0.0 && decoy_fraction <= 1.0)) {
    throw ConfigError("synth: decoy_fraction must lie in [0, 1]");
  }
  if (decoy_fraction > 0.0 && cohorts < 2) throw ConfigError("synth: decoys need at least two cohorts");
  if (!class_priors.empty()) {
    if (class_priors.size() != cohorts) throw ConfigError("synth: class_priors needs one row per cohort");
    for (const auto& row : class_priors) {
      if (row.size() != classes) throw ConfigError("synth: class_priors rows need one entry per class");
      double s = 0.0;
      for (double p : row) {
        if (!(p >= 0.0)) throw ConfigError("synth: class priors must be non-negative");
        s += p;
      }
      if (std::abs(s - 1.0) > 1e-9) throw ConfigError("synth: class priors per cohort must sum to 1");
    }
  }
}

std::size_t SynthConfig::patients_in(std::size_t cohort) const {
  return patients_per_cohort.size() == 1 ? patients_per_cohort[0] : patients_per_cohort.at(cohort);
}

std::vector<std::vector<double>> SynthConfig::effective_priors() const {
  std::vector<std::vector<double>> p(cohorts, std::vector<double>(classes, 1.0 / static_cast<double>(classes)));
  if (!class_priors.empty()) p = class_priors;
  for (std::size_t c = 0; c < cohorts; ++c) {
    for (std::size_t y = 0; y < classes; ++y) {
      p[c][y] = (1.0 - bias) * p[c][y] + (y == c % classes ? bias : 0.0);
    }
  }
  return p;
}

Dataset generate(const SynthConfig& cfg) {
  cfg.validate();
  const World world = make_world(cfg);
  const auto priors = cfg.effective_priors();
  const bool image = cfg.geometry.kind == TileKind::Image;
  const std::size_t vpt = cfg.geometry.values_per_tile();
  const std::size_t cells = image ? (cfg.geometry.side / cfg.motif_size) * (cfg.geometry.side / cfg.motif_size) : 0;

  Dataset ds;
  ds.cohorts = cfg.cohorts;
  ds.classes = cfg.classes;
  ds.geometry = cfg.geometry;

  std::uint64_t stream = 0;
  for (std::size_t c = 0; c < cfg.cohorts; ++c) {
    for (std::size_t p = 0; p < cfg.patients_in(c); ++p, ++stream) {
      Rng rng(derive_seed(cfg.seed, stream));
      std::discrete_distribution<std::size_t> class_dist(priors[c].begin(), priors[c].end());
      const std::size_t y = class_dist(rng);
      char pid[32];
      std::snprintf(pid, sizeof pid, "p%04zu", p);

      for (std::size_t s = 0; s < cfg.slides_per_patient; ++s) {
        Bag bag;
        bag.slide_id = "c" + std::to_string(c) + "-" + pid + "-s" + std::to_string(s);
        bag.patient_id = pid;
        bag.cohort = CohortId{c};
        bag.label = y;
        std::uniform_int_distribution<std::size_t> ntiles(cfg.min_tiles, cfg.max_tiles);
        const std::size_t n = ntiles(rng);
        bag.num_tiles = n;
        bag.tile_labels.assign(n, 0);

        // Which tiles carry what.
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<int> role(n, 0);  // 0 background, 1 witness, 2 decoy
        std::vector<std::pair<std::size_t, std::size_t>> decoy_src(n);
        if (y >= 1) {
          const auto w = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(cfg.witness_fraction * static_cast<double>(n))));
          for (std::size_t i = 0; i < std::min(w, n); ++i) {
            role[order[i]] = 1;
            bag.tile_labels[order[i]] = static_cast<std::int32_t>(y);
          }
        } else if (cfg.decoy_fraction > 0.0) {
          const auto d = static_cast<std::size_t>(std::lround(cfg.decoy_fraction * static_cast<double>(n)));
          std::uniform_int_distribution<std::size_t> other(1, cfg.cohorts - 1);
          std::uniform_int_distribution<std::size_t> cls(1, cfg.classes - 1);
          for (std::size_t i = 0; i < std::min(d, n); ++i) {
            role[order[i]] = 2;
            decoy_src[order[i]] = {(c + other(rng)) % cfg.cohorts, cls(rng)};
          }
        }

        std::normal_distribution<double> normal(0.0, 1.0);
        std::vector<double> slide_offset(image ? 1 : vpt);
        for (double& v : slide_offset) v = cfg.slide_noise * normal(rng);
        std::uniform_int_distribution<std::size_t> cell_dist(0, cells == 0 ? 0 : cells - 1);

        bag.tiles.resize(n * vpt);
        std::vector<double> tile(vpt);
        for (std::size_t t = 0; t < n; ++t) {
          for (std::size_t i = 0; i < vpt; ++i) {
            tile[i] = cfg.tile_noise * normal(rng) + slide_offset[image ? 0 : i];
          }
          if (cfg.cohort_style > 0.0) add_scaled(tile, world.style[c], cfg.cohort_style);
          if (role[t] == 1) {
            if (image) {
              const std::size_t a = cell_dist(rng);
              std::size_t b = cell_dist(rng);
              if (cells > 1) {
                while (b == a) b = cell_dist(rng);
              }
              if (cfg.shared_signal > 0.0) stamp(tile, world.shared[y], cfg.shared_signal, a, cfg);
              if (cfg.cohort_signal > 0.0) stamp(tile, world.cohort[c][y], cfg.cohort_signal, b, cfg);
            } else {
              add_scaled(tile, world.shared[y], cfg.shared_signal);
              add_scaled(tile, world.cohort[c][y], cfg.cohort_signal);
            }
          } else if (role[t] == 2) {
            const auto [dc, dy] = decoy_src[t];
            if (image) {
              stamp(tile, world.cohort[dc][dy], cfg.cohort_signal, cell_dist(rng), cfg);
            } else {
              add_scaled(tile, world.cohort[dc][dy], cfg.cohort_signal);
            }
          }
          for (std::size_t i = 0; i < vpt; ++i) bag.tiles[t * vpt + i] = static_cast<float>(tile[i]);
        }
        ds.bags.push_back(std::move(bag));
      }
    }
  }
  ds.validate();
  return ds;
}

}  // namespace mcmil::data
