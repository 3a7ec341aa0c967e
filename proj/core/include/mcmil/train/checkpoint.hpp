// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "mcmil/diff/params.hpp"

namespace mcmil::train {

/// Binary container:
///   8 bytes  magic "MCMILCK1"
///   8 bytes  manifest length N (little-endian uint64)
///   N bytes  JSON manifest: format, epoch, metrics, info, config echo, and per
///            tensor {name, shape, dtype "f64", offset, bytes}
///   payload  every tensor as little-endian float64, offsets relative to the
///            payload start
struct Checkpoint {
  diff::ParameterSet params;
  std::size_t epoch = 0;
  /// Validation metrics at save time; undefined metrics are left out.
  std::map<std::string, double> metrics;
  /// Integer facts about the data and fold the parameters were fitted to.
  std::map<std::string, std::int64_t> info;
  /// Resolved run configuration as a JSON object text.
  std::string config_json = "{}";

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
/// Throws IoError when unreadable and ParseError when malformed.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mcmil::train
