// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "mcmil/data/dataset.hpp"

namespace mcmil::data {

inline constexpr const char* kManifestName = "manifest.jsonl";
inline constexpr const char* kPayloadName = "tiles.bin";

/// Writes `<dir>/manifest.jsonl` (one header object, then one record per
/// bag) and `<dir>/tiles.bin` (little-endian float32 tile values). Both files
/// are written to temporaries first and renamed into place.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);

/// Reads a dataset written by write_dataset. `path` is the directory or its
/// manifest file. Throws ParseError with the offending line and byte offset
/// on malformed or truncated input, IoError when files cannot be opened.
Dataset read_dataset(const std::filesystem::path& path);

}  // namespace mcmil::data
