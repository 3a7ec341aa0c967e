// SPDX-License-Identifier: Apache-2.0
#include "mcmil/train/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "mcmil/error.hpp"

namespace mcmil::train {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'M', 'C', 'M', 'I', 'L', 'C', 'K', '1'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const fs::path& path) {
  json manifest;
  manifest["format"] = "mcmil-checkpoint";
  manifest["version"] = 1;
  manifest["epoch"] = ck.epoch;
  manifest["metrics"] = ck.metrics;
  manifest["info"] = ck.info;
  try {
    manifest["config"] = json::parse(ck.config_json);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("checkpoint config echo is not JSON: ") + e.what());
  }
  std::string payload;
  json tensors = json::array();
  for (const auto& [name, t] : ck.params) {
    const std::size_t offset = payload.size();
    for (double v : t.data()) put_u64(payload, std::bit_cast<std::uint64_t>(v));
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"dtype", "f64"}, {"offset", offset},
                       {"bytes", payload.size() - offset}});
  }
  manifest["tensors"] = tensors;
  const std::string text = manifest.dump();

  std::string bytes(kMagic, sizeof kMagic);
  put_u64(bytes, text.size());
  bytes += text;
  bytes += payload;

  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename '" + tmp.string() + "': " + ec.message());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());

  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw ParseError("not a checkpoint file", 0, 0);
  }
  const std::uint64_t n = get_u64(raw + 8);
  if (n > bytes.size() - 16) throw ParseError("truncated checkpoint manifest", 0, 16);
  json manifest;
  try {
    manifest = json::parse(bytes.substr(16, n));
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("invalid checkpoint manifest: ") + e.what(), 0, 16 + e.byte);
  }
  const std::size_t payload_start = 16 + n;
  const std::size_t payload_size = bytes.size() - payload_start;

  Checkpoint ck;
  try {
    if (manifest.at("format") != "mcmil-checkpoint" || manifest.at("version") != 1) {
      throw ParseError("unsupported checkpoint format", 0, 16);
    }
    ck.epoch = manifest.at("epoch").get<std::size_t>();
    ck.metrics = manifest.at("metrics").get<std::map<std::string, double>>();
    ck.info = manifest.at("info").get<std::map<std::string, std::int64_t>>();
    ck.config_json = manifest.at("config").dump();
    for (const auto& t : manifest.at("tensors")) {
      if (t.at("dtype") != "f64") throw ParseError("unsupported dtype", 0, 16);
      const auto shape = t.at("shape").get<std::vector<std::size_t>>();
      const auto offset = t.at("offset").get<std::size_t>();
      const auto nbytes = t.at("bytes").get<std::size_t>();
      std::size_t count = 1;
      for (std::size_t s : shape) count *= s;
      if (nbytes != count * 8 || offset > payload_size || nbytes > payload_size - offset) {
        throw ParseError("tensor '" + t.at("name").get<std::string>() + "' lies outside the payload", 0,
                         payload_start + offset);
      }
      std::vector<double> data(count);
      for (std::size_t i = 0; i < count; ++i) {
        data[i] = std::bit_cast<double>(get_u64(raw + payload_start + offset + 8 * i));
      }
      ck.params.add(t.at("name").get<std::string>(), diff::Tensor(shape, std::move(data)));
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed checkpoint manifest: ") + e.what(), 0, 16);
  }
  return ck;
}

}  // namespace mcmil::train
