// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

#include "mcmil/diff/tensor.hpp"

namespace mcmil {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; derives independent child seeds from a master seed.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  return splitmix64(master ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

/// Uniform [-scale, scale) tensor.
inline diff::Tensor uniform_tensor(std::size_t rows, std::size_t cols, double scale, Rng& rng) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  diff::Tensor t(rows, cols);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

inline diff::Tensor normal_tensor(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  diff::Tensor t(rows, cols);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace mcmil
