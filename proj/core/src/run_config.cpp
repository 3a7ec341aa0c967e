// SPDX-License-Identifier: Apache-2.0
#include "mcmil/train/run_config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "json.hpp"

#include "mcmil/error.hpp"

namespace mcmil::train {

using nlohmann::json;

namespace {

struct Field {
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&)> set;
};

[[noreturn]] void bad(const std::string& key, const std::string& want) {
  throw ConfigError("config key '" + key + "' expects " + want);
}

std::size_t as_size(const std::string& key, const json& v) {
  if (!v.is_number_unsigned()) {
    bad(key, "a non-negative integer");
  }
  return v.get<std::size_t>();
}

double as_double(const std::string& key, const json& v) {
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "inf") return INFINITY;
    bad(key, "a number");
  }
  if (!v.is_number()) bad(key, "a number");
  return v.get<double>();
}

json from_double(double x) { return std::isinf(x) ? json(x > 0 ? "inf" : "-inf") : json(x); }

bool as_bool(const std::string& key, const json& v) {
  if (!v.is_boolean()) bad(key, "true or false");
  return v.get<bool>();
}

std::string as_string(const std::string& key, const json& v) {
  if (!v.is_string()) bad(key, "a string");
  return v.get<std::string>();
}

#define SIZE_FIELD(key, member) \
  {key, {[](const RunConfig& c) { return json(c.member); }, [](RunConfig& c, const json& v) { c.member = as_size(key, v); }}}
#define DOUBLE_FIELD(key, member) \
  {key, {[](const RunConfig& c) { return from_double(c.member); }, [](RunConfig& c, const json& v) { c.member = as_double(key, v); }}}
#define BOOL_FIELD(key, member) \
  {key, {[](const RunConfig& c) { return json(c.member); }, [](RunConfig& c, const json& v) { c.member = as_bool(key, v); }}}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      // Dataset generator.
      SIZE_FIELD("cohorts", synth.cohorts),
      SIZE_FIELD("classes", synth.classes),
      {"patients_per_cohort",
       {[](const RunConfig& c) { return json(c.synth.patients_per_cohort); },
        [](RunConfig& c, const json& v) {
          if (v.is_number()) {
            c.synth.patients_per_cohort = {as_size("patients_per_cohort", v)};
            return;
          }
          if (!v.is_array() || v.empty()) bad("patients_per_cohort", "an integer or a non-empty integer array");
          std::vector<std::size_t> out;
          for (const auto& x : v) out.push_back(as_size("patients_per_cohort", x));
          c.synth.patients_per_cohort = out;
        }}},
      SIZE_FIELD("slides_per_patient", synth.slides_per_patient),
      SIZE_FIELD("min_tiles", synth.min_tiles),
      SIZE_FIELD("max_tiles", synth.max_tiles),
      {"tile_kind",
       {[](const RunConfig& c) { return json(c.synth.geometry.kind == data::TileKind::Feature ? "feature" : "image"); },
        [](RunConfig& c, const json& v) {
          const auto s = as_string("tile_kind", v);
          if (s != "feature" && s != "image") bad("tile_kind", "\"feature\" or \"image\"");
          c.synth.geometry.kind = s == "feature" ? data::TileKind::Feature : data::TileKind::Image;
        }}},
      SIZE_FIELD("feature_dim", synth.geometry.feature_dim),
      SIZE_FIELD("channels", synth.geometry.channels),
      SIZE_FIELD("side", synth.geometry.side),
      SIZE_FIELD("motif_size", synth.motif_size),
      DOUBLE_FIELD("shared_signal", synth.shared_signal),
      DOUBLE_FIELD("cohort_signal", synth.cohort_signal),
      DOUBLE_FIELD("bias", synth.bias),
      {"class_priors",
       {[](const RunConfig& c) { return json(c.synth.class_priors); },
        [](RunConfig& c, const json& v) {
          if (!v.is_array()) bad("class_priors", "an array of per-cohort probability arrays");
          std::vector<std::vector<double>> out;
          for (const auto& row : v) {
            if (!row.is_array()) bad("class_priors", "an array of per-cohort probability arrays");
            out.emplace_back();
            for (const auto& x : row) out.back().push_back(as_double("class_priors", x));
          }
          c.synth.class_priors = out;
        }}},
      DOUBLE_FIELD("witness_fraction", synth.witness_fraction),
      DOUBLE_FIELD("decoy_fraction", synth.decoy_fraction),
      DOUBLE_FIELD("cohort_style", synth.cohort_style),
      DOUBLE_FIELD("slide_noise", synth.slide_noise),
      DOUBLE_FIELD("tile_noise", synth.tile_noise),
      {"seed",
       {[](const RunConfig& c) { return json(c.train.seed); },
        [](RunConfig& c, const json& v) {
          if (!v.is_number_unsigned()) bad("seed", "a non-negative integer");
          c.synth.seed = c.train.seed = v.get<std::uint64_t>();
        }}},
      {"world_seed",
       {[](const RunConfig& c) { return c.synth.world_seed ? json(*c.synth.world_seed) : json(nullptr); },
        [](RunConfig& c, const json& v) {
          if (v.is_null()) {
            c.synth.world_seed.reset();
            return;
          }
          if (!v.is_number_unsigned()) bad("world_seed", "a non-negative integer or null");
          c.synth.world_seed = v.get<std::uint64_t>();
        }}},
      // Training.
      DOUBLE_FIELD("lambda", train.lambda),
      DOUBLE_FIELD("tau", train.tau),
      DOUBLE_FIELD("mil_lr", train.mil_lr),
      DOUBLE_FIELD("adversary_lr", train.adversary_lr),
      SIZE_FIELD("epochs", train.epochs),
      SIZE_FIELD("batch_size", train.batch_size),
      {"aggregator",
       {[](const RunConfig& c) { return json(mil::to_string(c.train.aggregator)); },
        [](RunConfig& c, const json& v) { c.train.aggregator = mil::parse_aggregator(as_string("aggregator", v)); }}},
      {"encoder_mode",
       {[](const RunConfig& c) { return json(to_string(c.train.encoder_mode)); },
        [](RunConfig& c, const json& v) { c.train.encoder_mode = parse_encoder_mode(as_string("encoder_mode", v)); }}},
      SIZE_FIELD("folds", train.folds),
      DOUBLE_FIELD("val_fraction", train.val_fraction),
      SIZE_FIELD("mi_hidden", train.mi_hidden),
      DOUBLE_FIELD("mi_sign", train.mi_sign),
      BOOL_FIELD("adversary", train.adversary),
      SIZE_FIELD("max_instances", train.max_instances),
      SIZE_FIELD("attn_hidden", train.attn_hidden),
      SIZE_FIELD("mil_heads", train.mil_heads),
      BOOL_FIELD("clip_weights", train.clip_weights),
      SIZE_FIELD("top_k", train.top_k),
      SIZE_FIELD("patch_size", train.encoder.patch_size),
      SIZE_FIELD("encoder_dim", train.encoder.dim),
      SIZE_FIELD("encoder_depth", train.encoder.depth),
      SIZE_FIELD("encoder_heads", train.encoder.heads),
      SIZE_FIELD("encoder_head_dim", train.encoder.head_dim),
      SIZE_FIELD("mlp_ratio", train.encoder.mlp_ratio),
      SIZE_FIELD("pretrain_epochs", train.pretrain_epochs),
      SIZE_FIELD("pretrain_batch_size", train.pretrain_batch_size),
      DOUBLE_FIELD("pretrain_lr", train.pretrain_lr),
      DOUBLE_FIELD("probe_tolerance", train.probe.tolerance),
      SIZE_FIELD("probe_max_iterations", train.probe.max_iterations),
      DOUBLE_FIELD("probe_train_fraction", train.probe.train_fraction),
  };
  return table;
}

#undef SIZE_FIELD
#undef DOUBLE_FIELD
#undef BOOL_FIELD

void apply(RunConfig& config, const std::string& key, const json& value) {
  const auto& table = fields();
  auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(config, value);
}

}  // namespace

std::vector<std::string> run_config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, f] : fields()) keys.push_back(k);
  return keys;
}

void apply_json(RunConfig& config, const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) apply(config, key, value);
}

void apply_value(RunConfig& config, const std::string& key, const std::string& value) {
  json v;
  try {
    v = json::parse(value);
  } catch (const json::parse_error&) {
    v = value;  // bare word
  }
  apply(config, key, v);
}

void apply_file(RunConfig& config, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    apply_json(config, ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string to_json(const RunConfig& config) {
  json j = json::object();
  for (const auto& [k, f] : fields()) j[k] = f.get(config);
  return j.dump();
}

}  // namespace mcmil::train
