// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mcmil/data/synth.hpp"
#include "mcmil/train/trainer.hpp"

namespace mcmil::train {

/// Every tunable of a run as one flat key space. The dataset generator and
/// the trainer share `seed`.
struct RunConfig {
  data::SynthConfig synth;
  TrainConfig train;
};

/// Keys accepted by apply_json, sorted.
std::vector<std::string> run_config_keys();

/// Overlay a flat JSON object. Unknown keys and mistyped values throw
/// ConfigError naming the key.
void apply_json(RunConfig& config, const std::string& json_object);
/// Overlay one key from its JSON value text; bare words are taken as strings.
void apply_value(RunConfig& config, const std::string& key, const std::string& value);
/// Read a config file (a flat JSON object) over `config`.
void apply_file(RunConfig& config, const std::filesystem::path& path);

/// Flat JSON object with every key, sorted, compact.
std::string to_json(const RunConfig& config);

}  // namespace mcmil::train
