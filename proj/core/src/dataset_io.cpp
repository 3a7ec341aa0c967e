// SPDX-License-Identifier: Apache-2.0
#include "mcmil/data/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "mcmil/error.hpp"

namespace mcmil::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFormat = "mcmil-dataset";
constexpr int kVersion = 1;

void put_f32_le(std::string& out, float v) {
  auto u = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xffu));
}

float get_f32_le(const unsigned char* p) {
  std::uint32_t u = 0;
  for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(u);
}

void write_file_atomic(const fs::path& target, const std::string& bytes) {
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) throw IoError("cannot rename '" + tmp.string() + "': " + ec.message());
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* kind_name(TileKind k) { return k == TileKind::Feature ? "feature" : "image"; }

template <typename T>
T field(const json& j, const char* name, std::size_t line, std::size_t offset) {
  if (!j.contains(name)) throw ParseError(std::string("missing field '") + name + "'", line, offset);
  try {
    return j.at(name).get<T>();
  } catch (const json::exception&) {
    throw ParseError(std::string("field '") + name + "' has the wrong type", line, offset);
  }
}

}  // namespace

void write_dataset(const Dataset& dataset, const fs::path& dir) {
  dataset.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());

  const std::size_t vpt = dataset.geometry.values_per_tile();
  std::string payload;
  payload.reserve(dataset.num_tiles() * vpt * 4);
  std::string manifest;

  json header = {
      {"format", kFormat},
      {"version", kVersion},
      {"cohorts", dataset.cohorts},
      {"classes", dataset.classes},
      {"tile_kind", kind_name(dataset.geometry.kind)},
      {"feature_dim", dataset.geometry.feature_dim},
      {"channels", dataset.geometry.channels},
      {"side", dataset.geometry.side},
      {"num_bags", dataset.bags.size()},
      {"num_tiles", dataset.num_tiles()},
      {"payload", kPayloadName},
      {"payload_bytes", dataset.num_tiles() * vpt * 4},
  };
  manifest += header.dump() + "\n";
  for (const Bag& b : dataset.bags) {
    const std::size_t offset = payload.size();
    for (float v : b.tiles) put_f32_le(payload, v);
    json rec = {
        {"slide_id", b.slide_id},
        {"patient_id", b.patient_id},
        {"cohort", b.cohort.value},
        {"label", b.label},
        {"num_tiles", b.num_tiles},
        {"offset", offset},
        {"length", payload.size() - offset},
        {"weight", b.weight},
        {"tile_labels", b.tile_labels},
    };
    manifest += rec.dump() + "\n";
  }
  write_file_atomic(dir / kPayloadName, payload);
  write_file_atomic(dir / kManifestName, manifest);
}

Dataset read_dataset(const fs::path& path) {
  const fs::path manifest_path = fs::is_directory(path) ? path / kManifestName : path;
  const std::string text = read_file(manifest_path);

  std::vector<std::pair<std::size_t, std::string>> lines;  // (byte offset, content)
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) {
      // A final line without newline means the writer was interrupted.
      throw ParseError("unterminated final line", lines.size() + 1, start);
    }
    lines.emplace_back(start, text.substr(start, end - start));
    start = end + 1;
  }
  if (lines.empty()) throw ParseError("empty manifest", 1, 0);

  auto parse = [&](std::size_t i) {
    try {
      json j = json::parse(lines[i].second);
      if (!j.is_object()) throw ParseError("expected a JSON object", i + 1, lines[i].first);
      return j;
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what(), i + 1, lines[i].first + e.byte);
    }
  };

  const json header = parse(0);
  const std::size_t off0 = lines[0].first;
  if (field<std::string>(header, "format", 1, off0) != kFormat) throw ParseError("not a dataset manifest", 1, off0);
  if (field<int>(header, "version", 1, off0) != kVersion) throw ParseError("unsupported manifest version", 1, off0);

  Dataset ds;
  ds.cohorts = field<std::size_t>(header, "cohorts", 1, off0);
  ds.classes = field<std::size_t>(header, "classes", 1, off0);
  const auto kind = field<std::string>(header, "tile_kind", 1, off0);
  if (kind != "feature" && kind != "image") throw ParseError("unknown tile_kind '" + kind + "'", 1, off0);
  ds.geometry.kind = kind == "feature" ? TileKind::Feature : TileKind::Image;
  ds.geometry.feature_dim = field<std::size_t>(header, "feature_dim", 1, off0);
  ds.geometry.channels = field<std::size_t>(header, "channels", 1, off0);
  ds.geometry.side = field<std::size_t>(header, "side", 1, off0);
  const auto num_bags = field<std::size_t>(header, "num_bags", 1, off0);
  const auto payload_bytes = field<std::size_t>(header, "payload_bytes", 1, off0);
  const auto payload_name = field<std::string>(header, "payload", 1, off0);

  if (lines.size() - 1 != num_bags) {
    throw ParseError("manifest declares " + std::to_string(num_bags) + " bags but holds " +
                         std::to_string(lines.size() - 1),
                     lines.size(), text.size());
  }

  const std::string payload = read_file(manifest_path.parent_path() / payload_name);
  if (payload.size() != payload_bytes) {
    throw ParseError("payload has " + std::to_string(payload.size()) + " bytes, manifest declares " +
                         std::to_string(payload_bytes),
                     0, payload.size());
  }

  const std::size_t vpt = ds.geometry.values_per_tile();
  ds.bags.reserve(num_bags);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const json rec = parse(i);
    const std::size_t line = i + 1, off = lines[i].first;
    Bag b;
    b.slide_id = field<std::string>(rec, "slide_id", line, off);
    b.patient_id = field<std::string>(rec, "patient_id", line, off);
    b.cohort = CohortId{field<std::size_t>(rec, "cohort", line, off)};
    if (b.cohort.value >= ds.cohorts) {
      throw ParseError("record cohort " + std::to_string(b.cohort.value) + " exceeds manifest cohort count " +
                           std::to_string(ds.cohorts),
                       line, off);
    }
    b.label = field<std::size_t>(rec, "label", line, off);
    if (b.label >= ds.classes) throw ParseError("record label exceeds manifest class count", line, off);
    b.num_tiles = field<std::size_t>(rec, "num_tiles", line, off);
    b.weight = field<double>(rec, "weight", line, off);
    b.tile_labels = field<std::vector<std::int32_t>>(rec, "tile_labels", line, off);
    const auto offset = field<std::size_t>(rec, "offset", line, off);
    const auto length = field<std::size_t>(rec, "length", line, off);
    if (length != b.num_tiles * vpt * 4) throw ParseError("record length disagrees with num_tiles", line, off);
    if (offset > payload.size() || length > payload.size() - offset) {
      throw ParseError("record points past the end of the payload", line, off);
    }
    b.tiles.resize(b.num_tiles * vpt);
    const auto* p = reinterpret_cast<const unsigned char*>(payload.data()) + offset;
    for (std::size_t k = 0; k < b.tiles.size(); ++k) b.tiles[k] = get_f32_le(p + 4 * k);
    ds.bags.push_back(std::move(b));
  }
  ds.validate();
  return ds;
}

}  // namespace mcmil::data
