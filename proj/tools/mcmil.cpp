// SPDX-License-Identifier: Apache-2.0
// mcmil: dataset generation, cross-validated training, evaluation, cohort
// probing, verification suites and lambda sweeps.
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mcmil/data/io.hpp"
#include "mcmil/data/synth.hpp"
#include "mcmil/error.hpp"
#include "mcmil/train/checkpoint.hpp"
#include "mcmil/train/probe.hpp"
#include "mcmil/train/run_config.hpp"
#include "mcmil/train/trainer.hpp"
#include "mcmil/util/log.hpp"
#include "mcmil/verify/suites.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mcmil;

namespace {

enum Exit { kOk = 0, kUsage = 2, kIo = 3, kNumeric = 4, kMismatch = 5 };

constexpr const char* kResolvedConfig = "resolved_config.json";

struct ConfigFlags {
  std::string file;
  std::vector<std::string> sets;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& f) {
  cmd->add_option("--config", f.file, "Flat JSON config file");
  cmd->add_option("--set", f.sets, "Override one config key, key=value (repeatable)");
}

/// Defaults, then the config file, then --set, then the dedicated flags.
train::RunConfig resolve(const ConfigFlags& f) {
  train::RunConfig rc;
  if (!f.file.empty()) train::apply_file(rc, f.file);
  for (const auto& kv : f.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + kv + "'");
    train::apply_value(rc, kv.substr(0, eq), kv.substr(eq + 1));
  }
  return rc;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + p.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write failed for '" + p.string() + "'");
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string pretty_config(const train::RunConfig& rc) { return json::parse(train::to_json(rc)).dump(2) + "\n"; }

// ---------------------------------------------------------------- synth

std::string summary_table(const data::Dataset& ds) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> slides, tiles;
  std::map<std::pair<std::size_t, std::size_t>, std::set<std::string>> patients;
  for (const auto& b : ds.bags) {
    const auto key = std::make_pair(b.cohort.value, b.label);
    ++slides[key];
    tiles[key] += b.num_tiles;
    patients[key].insert(data::patient_key(b));
  }
  std::string out = "cohort  class  patients  slides  tiles\n";
  char buf[128];
  std::size_t ts = 0, tt = 0;
  for (std::size_t c = 0; c < ds.cohorts; ++c) {
    for (std::size_t y = 0; y < ds.classes; ++y) {
      const auto key = std::make_pair(c, y);
      std::snprintf(buf, sizeof buf, "%-6zu  %-5zu  %-8zu  %-6zu  %zu\n", c, y, patients[key].size(), slides[key],
                    tiles[key]);
      out += buf;
      ts += slides[key];
      tt += tiles[key];
    }
  }
  std::snprintf(buf, sizeof buf, "total          %-8zu  %-6zu  %zu\n", ds.patients().size(), ts, tt);
  out += buf;
  return out;
}

int cmd_synth(const ConfigFlags& cf, const std::string& out, const std::optional<std::uint64_t>& seed) {
  train::RunConfig rc = resolve(cf);
  if (seed) rc.synth.seed = rc.train.seed = *seed;
  const data::Dataset ds = data::generate(rc.synth);
  data::write_dataset(ds, out);
  write_file(fs::path(out) / kResolvedConfig, pretty_config(rc));
  std::cout << summary_table(ds);
  return kOk;
}

// ---------------------------------------------------------------- train

struct TrainFlags {
  std::string data;
  std::string out_dir;
  double lambda = 0.0;
  std::string tau;
  std::string aggregator;
  std::size_t folds = 0;
  std::string encoder_mode;
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
};

void apply_train_flags(train::RunConfig& rc, const TrainFlags& f, const CLI::App* cmd) {
  if (cmd->count("--lambda")) rc.train.lambda = f.lambda;
  if (cmd->count("--tau")) train::apply_value(rc, "tau", f.tau);
  if (cmd->count("--aggregator")) rc.train.aggregator = mil::parse_aggregator(f.aggregator);
  if (cmd->count("--folds")) rc.train.folds = f.folds;
  if (cmd->count("--encoder-mode")) rc.train.encoder_mode = train::parse_encoder_mode(f.encoder_mode);
  if (cmd->count("--seed")) rc.synth.seed = rc.train.seed = f.seed;
  if (cmd->count("--epochs")) rc.train.epochs = f.epochs;
  rc.train.validate();
}

/// Output entries a training run owns inside its directory.
bool owned_entry(const fs::path& p) {
  const std::string n = p.filename().string();
  return n.rfind("fold_", 0) == 0 || n.rfind("lambda_", 0) == 0 || n.rfind("aggregate.", 0) == 0 ||
         n.rfind("sweep.", 0) == 0 || n == kResolvedConfig;
}

void clear_owned(const fs::path& dir) {
  std::error_code ec;
  if (!fs::exists(dir, ec)) return;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (owned_entry(e.path())) fs::remove_all(e.path(), ec);
  }
}

/// Removes partial outputs if the run does not finish.
class OutputGuard {
 public:
  explicit OutputGuard(fs::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    created_ = !fs::exists(dir_, ec);
    clear_owned(dir_);
    fs::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create '" + dir_.string() + "': " + ec.message());
  }
  ~OutputGuard() {
    if (committed_) return;
    std::error_code ec;
    if (created_) {
      fs::remove_all(dir_, ec);
    } else {
      clear_owned(dir_);
    }
  }
  void commit() { committed_ = true; }

 private:
  fs::path dir_;
  bool created_ = false;
  bool committed_ = false;
};

std::vector<train::FoldResult> run_cv(const data::Dataset& ds, const train::RunConfig& rc, const fs::path& dir) {
  const std::string cfg = train::to_json(rc);
  write_file(dir / kResolvedConfig, pretty_config(rc));
  auto folds = train::cross_validate({&ds, cfg}, rc.train);
  train::write_cv_outputs(dir, folds);
  return folds;
}

int cmd_train(const ConfigFlags& cf, const TrainFlags& tf, const CLI::App* cmd) {
  train::RunConfig rc = resolve(cf);
  apply_train_flags(rc, tf, cmd);
  const data::Dataset ds = data::read_dataset(tf.data);
  OutputGuard guard(tf.out_dir);
  const auto folds = run_cv(ds, rc, tf.out_dir);
  guard.commit();
  std::cout << train::aggregate_text(folds);
  return kOk;
}

int cmd_sweep(const ConfigFlags& cf, const TrainFlags& tf, const CLI::App* cmd, const std::vector<double>& lambdas) {
  train::RunConfig base = resolve(cf);
  apply_train_flags(base, tf, cmd);
  if (lambdas.empty()) throw ConfigError("--lambdas must list at least one value");
  const data::Dataset ds = data::read_dataset(tf.data);
  OutputGuard guard(tf.out_dir);
  write_file(fs::path(tf.out_dir) / kResolvedConfig, pretty_config(base));
  json rows = json::array();
  std::string text = "lambda  test_auc                  probe_auc\n";
  for (double lambda : lambdas) {
    train::RunConfig rc = base;
    rc.train.lambda = lambda;
    rc.train.validate();
    std::ostringstream name;
    name << "lambda_" << lambda;
    const fs::path dir = fs::path(tf.out_dir) / name.str();
    fs::create_directories(dir);
    const auto folds = run_cv(ds, rc, dir);
    const json agg = json::parse(train::aggregate_json(folds));
    rows.push_back({{"lambda", lambda}, {"test_auc", agg.at("test_auc")}, {"probe_auc", agg.at("probe_auc")}});
    auto cell = [&](const char* key) {
      const auto& s = agg.at(key);
      if (s.at("mean").is_null()) return std::string("undefined");
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.4f +/- %.4f", s.at("mean").get<double>(), s.at("std").get<double>());
      return std::string(buf);
    };
    char line[160];
    std::snprintf(line, sizeof line, "%-6g  %-24s  %s\n", lambda, cell("test_auc").c_str(), cell("probe_auc").c_str());
    text += line;
  }
  write_file(fs::path(tf.out_dir) / "sweep.json", json{{"rows", rows}}.dump(2) + "\n");
  write_file(fs::path(tf.out_dir) / "sweep.txt", text);
  guard.commit();
  std::cout << text;
  return kOk;
}

// ---------------------------------------------------------------- eval / probe

struct ModelSource {
  std::vector<train::Checkpoint> checkpoints;
  std::optional<fs::path> split;  // split.json next to the checkpoints
};

/// A checkpoint file, a fold directory (model_rank*.ckpt), or a training
/// output directory (every fold_<i>).
std::vector<ModelSource> load_sources(const fs::path& model, std::size_t members) {
  std::error_code ec;
  if (!fs::exists(model, ec)) throw IoError("model path '" + model.string() + "' does not exist");
  if (fs::is_regular_file(model)) return {{{train::load_checkpoint(model)}, std::nullopt}};

  auto from_fold = [&](const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      const auto n = e.path().filename().string();
      if (n.rfind("model_rank", 0) == 0 && e.path().extension() == ".ckpt") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) {
      auto rank = [](const fs::path& p) { return std::stoul(p.stem().string().substr(10)); };
      return rank(a) < rank(b);
    });
    if (files.empty()) throw IoError("no model_rank*.ckpt in '" + dir.string() + "'");
    if (members > 0 && files.size() > members) files.resize(members);
    ModelSource s;
    for (const auto& f : files) s.checkpoints.push_back(train::load_checkpoint(f));
    if (fs::exists(dir / "split.json")) s.split = dir / "split.json";
    return s;
  };

  std::vector<fs::path> folds;
  for (const auto& e : fs::directory_iterator(model)) {
    if (e.is_directory() && e.path().filename().string().rfind("fold_", 0) == 0) folds.push_back(e.path());
  }
  if (folds.empty()) return {from_fold(model)};
  std::sort(folds.begin(), folds.end(), [](const fs::path& a, const fs::path& b) {
    return std::stoul(a.filename().string().substr(5)) < std::stoul(b.filename().string().substr(5));
  });
  std::vector<ModelSource> out;
  for (const auto& f : folds) out.push_back(from_fold(f));
  return out;
}

std::vector<std::size_t> partition_bags(const ModelSource& src, const data::Dataset& ds, const std::string& partition) {
  std::vector<std::size_t> all(ds.bags.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  if (partition == "all") return all;
  if (!src.split) throw ConfigError("--partition " + partition + " needs a fold directory with split.json");
  const json s = json::parse(read_file(*src.split));
  const auto bags = s.at(partition + "_bags").get<std::vector<std::size_t>>();
  const auto patients = s.at(partition).get<std::vector<std::string>>();
  std::set<std::string> want(patients.begin(), patients.end()), got;
  for (std::size_t b : bags) {
    if (b >= ds.bags.size()) throw MismatchError("split refers to bag " + std::to_string(b) + " beyond the dataset");
    got.insert(data::patient_key(ds.bags[b]));
  }
  if (want != got) throw MismatchError("split patients do not match the dataset");
  return bags;
}

void check_partition(const std::string& p) {
  if (p != "all" && p != "train" && p != "val" && p != "test") {
    throw ConfigError("--partition must be all, train, val or test");
  }
}

std::string metrics_text(const train::MetricsReport& r) {
  auto f = [](const std::optional<double>& v) {
    if (!v) return std::string("undefined");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", *v);
    return std::string(buf);
  };
  std::string out = "patients " + std::to_string(r.patients) + "  auc " + f(r.auc) + "  b-acc " +
                    f(r.balanced_accuracy) + "  probe_auc " + f(r.probe_auc) + "\n";
  for (const auto& [c, v] : r.cohort_auc) {
    out += "  cohort " + std::to_string(c) + "  auc " + f(v) + "  b-acc " + f(r.cohort_balanced_accuracy.at(c)) + "\n";
  }
  return out;
}

int cmd_eval(const std::string& model, const std::string& data_path, const std::string& partition,
             std::size_t members, const std::string& out) {
  check_partition(partition);
  const data::Dataset ds = data::read_dataset(data_path);
  json reports = json::array();
  for (const auto& src : load_sources(model, members)) {
    const auto loaded = train::load_model(src.checkpoints, ds);
    const auto bags = partition_bags(src, ds, partition);
    if (bags.empty()) throw ConfigError("no bags in partition '" + partition + "'");
    const data::Dataset feats = train::mil_features(ds, loaded.encoder);
    const auto r = train::evaluate(loaded, feats, bags);
    std::cout << "fold " << loaded.fold << " (" << loaded.members.size() << " members, " << partition << ")\n"
              << metrics_text(r);
    json j = json::parse(train::metrics_json(r));
    j["fold"] = loaded.fold;
    j["members"] = loaded.members.size();
    j["partition"] = partition;
    reports.push_back(j);
  }
  const std::string text = (reports.size() == 1 ? reports[0] : reports).dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
  } else {
    write_file(out, text);
  }
  return kOk;
}

int cmd_probe(const std::string& model, const std::string& data_path, const std::string& partition,
              const std::string& out) {
  check_partition(partition);
  const data::Dataset ds = data::read_dataset(data_path);
  std::set<std::size_t> present;
  for (const auto& b : ds.bags) present.insert(b.cohort.value);
  if (present.size() < 2) throw ConfigError("the cohort probe needs data from at least two cohorts");
  json results = json::array();
  for (const auto& src : load_sources(model, 1)) {
    const auto loaded = train::load_model(src.checkpoints, ds);
    const auto bags = partition_bags(src, ds, partition);
    const data::Dataset feats = train::mil_features(ds, loaded.encoder);
    std::vector<CohortId> cohorts;
    for (std::size_t b : bags) cohorts.push_back(ds.bags[b].cohort);
    const diff::Tensor z = train::representations(loaded.model, loaded.members.front(), feats, bags);
    train::ProbeConfig pc = loaded.config.probe;
    pc.seed = loaded.config.seed;
    const auto res = train::cohort_probe(z, cohorts, ds.cohorts, pc);
    std::printf("fold %zu probe_auc %.4f (train %zu, test %zu, %s after %zu iterations)\n", loaded.fold, res.auc,
                res.train_size, res.test_size, res.converged ? "converged" : "not converged", res.iterations);
    results.push_back({{"fold", loaded.fold},
                       {"probe_auc", res.auc},
                       {"train_size", res.train_size},
                       {"test_size", res.test_size},
                       {"iterations", res.iterations},
                       {"converged", res.converged}});
  }
  const std::string text = (results.size() == 1 ? results[0] : results).dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
  } else {
    write_file(out, text);
  }
  return kOk;
}

// ---------------------------------------------------------------- verify

int cmd_verify(const std::string& fault, std::uint64_t seed, const std::vector<std::string>& suites,
               std::size_t instances) {
  verify::VerifyOptions opt;
  opt.seed = seed;
  opt.gradient_instances = instances;
  if (!fault.empty()) {
    if (fault != "clip-grad-sign") throw ConfigError("unknown fault '" + fault + "' (known: clip-grad-sign)");
    opt.flip_clip_gradient = true;
  }
  const auto names = suites.empty() ? verify::suite_names() : suites;
  std::vector<verify::SuiteReport> reports;
  for (const auto& n : names) {
    reports.push_back(verify::run_suite(n, opt));
    std::cout << verify::format_report({reports.back()}) << std::flush;
  }
  const bool ok = std::all_of(reports.begin(), reports.end(), [](const auto& r) { return r.passed(); });
  std::cout << (ok ? "all suites passed\n" : "verification FAILED\n");
  return ok ? kOk : kNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-cohort multiple-instance learning on synthetic slides"};
  app.require_subcommand(1);

  ConfigFlags cf;
  TrainFlags tf;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  std::string synth_out;
  std::uint64_t synth_seed = 0;
  add_config_flags(synth, cf);
  synth->add_option("--out", synth_out, "Output directory")->required();
  auto* synth_seed_opt = synth->add_option("--seed", synth_seed, "Generator seed");

  auto add_train_flags = [&](CLI::App* cmd) {
    add_config_flags(cmd, cf);
    cmd->add_option("--data", tf.data, "Dataset directory or manifest")->required();
    cmd->add_option("--out-dir", tf.out_dir, "Output directory")->required();
    cmd->add_option("--lambda", tf.lambda, "MI penalty weight");
    cmd->add_option("--tau", tf.tau, "SMILE clip bound (number or inf)");
    cmd->add_option("--aggregator", tf.aggregator, "mean, max, abmil or mha");
    cmd->add_option("--folds", tf.folds, "Cross-validation folds");
    cmd->add_option("--encoder-mode", tf.encoder_mode, "cavit, plain-vit or precomputed-features");
    cmd->add_option("--seed", tf.seed, "Training seed");
    cmd->add_option("--epochs", tf.epochs, "MIL epochs per fold");
  };
  auto* train_cmd = app.add_subcommand("train", "Cross-validated training");
  add_train_flags(train_cmd);

  auto* sweep = app.add_subcommand("sweep", "Cross-validated training over several lambda values");
  add_train_flags(sweep);
  std::vector<double> lambdas = {0.0, 0.25, 0.5, 1.0};
  sweep->add_option("--lambdas", lambdas, "Lambda values")->delimiter(',');

  std::string model, data_path, partition = "all", report_out;
  std::size_t members = 0;
  auto* eval = app.add_subcommand("eval", "Evaluate saved models");
  eval->add_option("--model", model, "Checkpoint, fold directory or training output directory")->required();
  eval->add_option("--data", data_path, "Dataset directory or manifest")->required();
  eval->add_option("--partition", partition, "all, train, val or test (fold directories only)");
  eval->add_option("--members", members, "Use only the best N ensemble members (0 = all)");
  eval->add_option("--out", report_out, "Write the JSON report here instead of stdout");

  auto* probe = app.add_subcommand("probe", "Cohort probe on slide representations");
  probe->add_option("--model", model, "Checkpoint, fold directory or training output directory")->required();
  probe->add_option("--data", data_path, "Dataset directory or manifest")->required();
  probe->add_option("--partition", partition, "all, train, val or test (fold directories only)");
  probe->add_option("--out", report_out, "Write the JSON result here instead of stdout");

  auto* verify_cmd = app.add_subcommand("verify", "Run the invariant suites");
  std::string fault;
  std::uint64_t verify_seed = 0;
  std::vector<std::string> suites;
  std::size_t instances = 10;
  verify_cmd->add_option("--inject-fault", fault, "Mutation to inject (clip-grad-sign)");
  verify_cmd->add_option("--seed", verify_seed, "Seed for random instances");
  verify_cmd->add_option("--suite", suites, "Run only these suites")->check(CLI::IsMember(verify::suite_names()));
  verify_cmd->add_option("--gradient-instances", instances, "Random instances per gradient case");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*synth) {
      std::optional<std::uint64_t> seed;
      if (synth_seed_opt->count()) seed = synth_seed;
      return cmd_synth(cf, synth_out, seed);
    }
    if (*train_cmd) return cmd_train(cf, tf, train_cmd);
    if (*sweep) return cmd_sweep(cf, tf, sweep, lambdas);
    if (*eval) return cmd_eval(model, data_path, partition, members, report_out);
    if (*probe) return cmd_probe(model, data_path, partition, report_out);
    if (*verify_cmd) return cmd_verify(fault, verify_seed, suites, instances);
  } catch (const MismatchError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kMismatch;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kIo;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return kUsage;
  } catch (const json::exception& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  }
  return kUsage;
}
