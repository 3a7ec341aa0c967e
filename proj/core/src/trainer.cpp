// SPDX-License-Identifier: Apache-2.0
#include "mcmil/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>

#include "json.hpp"

#include "mcmil/balance/weights.hpp"
#include "mcmil/encoder/pretrain.hpp"
#include "mcmil/error.hpp"
#include "mcmil/train/run_config.hpp"
#include "mcmil/util/log.hpp"
#include "mcmil/util/rng.hpp"

namespace mcmil::train {

namespace fs = std::filesystem;
using diff::ParameterSet;
using diff::Tensor;
using nlohmann::json;

namespace {

enum Stream : std::uint64_t {
  kMilInit = 1,
  kAdversaryInit = 2,
  kShuffle = 3,
  kSubsample = 4,
  kPretrain = 5,
  kProbe = 6,
};

std::uint64_t fold_seed(std::uint64_t seed, std::size_t fold, Stream s) {
  return derive_seed(derive_seed(seed, 0x464f4c44ULL + fold), s);
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

bool has_probe_support(const std::vector<CohortId>& cohorts) {
  std::map<std::size_t, std::size_t> n;
  for (CohortId c : cohorts) ++n[c.value];
  std::size_t usable = 0;
  for (const auto& [c, k] : n) usable += k >= 2 ? 1 : 0;
  return usable >= 2;
}

std::optional<double> probe_auc(const mil::MilModel& model, const ParameterSet& params, const data::Dataset& feats,
                                const std::vector<std::size_t>& bags, const ProbeConfig& cfg) {
  std::vector<CohortId> cohorts;
  for (std::size_t b : bags) cohorts.push_back(feats.bags[b].cohort);
  if (bags.size() < 4 || !has_probe_support(cohorts)) return std::nullopt;
  return cohort_probe(representations(model, params, feats, bags), cohorts, feats.cohorts, cfg).auc;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + p.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write failed for '" + p.string() + "'");
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "undefined";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *v);
  return buf;
}

}  // namespace

std::string to_string(EncoderMode mode) {
  switch (mode) {
    case EncoderMode::Cavit: return "cavit";
    case EncoderMode::PlainVit: return "plain-vit";
    case EncoderMode::PrecomputedFeatures: return "precomputed-features";
  }
  return "?";
}

EncoderMode parse_encoder_mode(const std::string& name) {
  if (name == "cavit") return EncoderMode::Cavit;
  if (name == "plain-vit") return EncoderMode::PlainVit;
  if (name == "precomputed-features") return EncoderMode::PrecomputedFeatures;
  throw ConfigError("unknown encoder mode '" + name + "' (expected cavit, plain-vit or precomputed-features)");
}

void TrainConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be a finite value >= 0");
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (!(mil_lr >= 0.0) || !(adversary_lr >= 0.0) || !(pretrain_lr >= 0.0)) {
    throw ConfigError("learning rates must be >= 0");
  }
  if (epochs == 0) throw ConfigError("epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (lambda > 0.0 && adversary && batch_size < 2) throw ConfigError("batch_size must be >= 2 when lambda > 0");
  if (folds < 2) throw ConfigError("folds must be >= 2");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in [0, 1)");
  if (mi_hidden == 0) throw ConfigError("mi_hidden must be positive");
  if (!(mi_sign == 1.0 || mi_sign == -1.0)) throw ConfigError("mi_sign must be +1 or -1");
  if (max_instances == 0) throw ConfigError("max_instances must be positive");
  if (top_k == 0) throw ConfigError("top_k must be >= 1");
  if (pretrain_batch_size == 0) throw ConfigError("pretrain_batch_size must be >= 1");
}

MilState::MilState(const mil::MilConfig& config, diff::AdamConfig adam) : model(config), optimizer(adam) {}

mil::MilConfig mil_config(const TrainConfig& config, std::size_t dim, std::size_t classes) {
  mil::MilConfig mc;
  mc.kind = config.aggregator;
  mc.dim = dim;
  mc.classes = classes;
  mc.attn_hidden = config.attn_hidden;
  mc.heads = config.mil_heads;
  mc.max_instances = config.max_instances;
  return mc;
}

StepRecord train_step(const std::vector<BatchItem>& batch, MilState& state, mi::MIEstimatorState* adversary,
                      const TrainConfig& config, std::size_t cohorts) {
  if (batch.empty()) throw ConfigError("train_step: empty batch");
  StepRecord rec;
  std::vector<std::size_t> labels;
  std::vector<double> weights;
  std::vector<CohortId> cohort_ids;
  for (const auto& item : batch) {
    labels.push_back(item.label);
    weights.push_back(item.weight);
    cohort_ids.push_back(item.cohort);
  }
  if (std::all_of(weights.begin(), weights.end(), [](double w) { return w == 0.0; })) return rec;

  diff::Graph g;
  // (1) slide representations.
  std::vector<diff::Var> zs;
  zs.reserve(batch.size());
  for (const auto& item : batch) zs.push_back(state.model.aggregate(g, state.params, g.constant(item.features)));
  diff::Var z = zs.size() == 1 ? zs[0] : g.concat_rows(zs);

  const bool use_mi = adversary != nullptr && config.lambda > 0.0 && batch.size() >= 2 && !mi::single_cohort(cohort_ids);
  diff::Var l_mi;
  if (use_mi) {
    const Tensor c = mi::one_hot(cohort_ids, cohorts);
    // (2) adversary ascent on a detached copy, then (3) frozen re-estimate.
    rec.adversary_estimate = mi::adversary_update(*adversary, g.value(z), c);
    l_mi = mi::mi_loss(g, *adversary, z, g.constant(c), config.mi_sign);
    rec.loss_mi = g.value(l_mi)[0];
    rec.mi_applied = true;
  }
  // (4) predictions and (5) the combined objective.
  diff::Var logits = state.model.logits(g, state.params, z);
  diff::Var l_mil = mil::weighted_cross_entropy(g, logits, labels, balance::batch_renormalize(weights));
  diff::Var total = use_mi ? g.add(l_mil, g.scale(l_mi, config.lambda)) : l_mil;
  rec.loss_mil = g.value(l_mil)[0];
  rec.loss_total = g.value(total)[0];
  g.backward(total);
  state.optimizer.step(state.params, g.param_gradients(state.params));
  return rec;
}

std::vector<std::size_t> select_top(const std::vector<std::optional<double>>& val_auc, std::size_t k) {
  std::vector<std::size_t> idx(val_auc.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (val_auc[a].has_value() != val_auc[b].has_value()) return val_auc[a].has_value();
    return val_auc[a].has_value() && *val_auc[a] > *val_auc[b];
  });
  if (idx.size() > k) idx.resize(k);
  return idx;
}

Ensemble bag_models(const std::vector<Checkpoint>& checkpoints, std::size_t k) {
  if (checkpoints.empty()) throw ConfigError("bag_models: no checkpoints");
  if (checkpoints.size() < k) {
    log::warn("bagging_short").kv("available", checkpoints.size()).kv("wanted", k);
  }
  std::vector<std::optional<double>> auc;
  for (const auto& ck : checkpoints) {
    auto it = ck.metrics.find("val_auc");
    auc.push_back(it == ck.metrics.end() ? std::nullopt : std::optional<double>(it->second));
  }
  Ensemble out;
  for (std::size_t i : select_top(auc, k)) out.push_back(checkpoints[i]);
  return out;
}

std::vector<SlidePrediction> predict(const mil::MilModel& model, const std::vector<ParameterSet>& members,
                                     const data::Dataset& features, const std::vector<std::size_t>& bags) {
  if (members.empty()) throw ConfigError("predict: empty ensemble");
  std::vector<SlidePrediction> out;
  out.reserve(bags.size());
  for (std::size_t b : bags) {
    const data::Bag& bag = features.bags.at(b);
    const Tensor x = data::bag_features(bag, features.geometry);
    std::vector<double> probs(features.classes, 0.0);
    for (const auto& params : members) {
      const Tensor p = model.predict(params, x);
      for (std::size_t c = 0; c < probs.size(); ++c) probs[c] += p[c];
    }
    for (double& p : probs) p /= static_cast<double>(members.size());
    out.push_back({data::patient_key(bag), bag.cohort, bag.label, std::move(probs)});
  }
  return out;
}

Tensor representations(const mil::MilModel& model, const ParameterSet& params, const data::Dataset& features,
                       const std::vector<std::size_t>& bags) {
  const std::size_t d = model.config().dim;
  Tensor z(bags.size(), d);
  for (std::size_t i = 0; i < bags.size(); ++i) {
    const Tensor r = model.representation(params, data::bag_features(features.bags.at(bags[i]), features.geometry));
    for (std::size_t j = 0; j < d; ++j) z(i, j) = r[j];
  }
  return z;
}

FoldResult train_fold(const FoldInputs& inputs, const data::FoldSplit& split, std::size_t fold,
                      const TrainConfig& cfg) {
  cfg.validate();
  if (!inputs.dataset) throw ConfigError("train_fold: no dataset");
  const data::Dataset& ds = *inputs.dataset;
  if (split.train.empty()) throw ConfigError("train_fold: empty training partition");

  FoldResult res;
  res.fold = fold;
  res.split = split;

  std::optional<encoder::EncoderParams> enc;
  data::Dataset encoded;
  const data::Dataset* feats = &ds;
  if (cfg.encoder_mode != EncoderMode::PrecomputedFeatures) {
    if (ds.geometry.kind != data::TileKind::Image) {
      throw ConfigError("encoder mode " + to_string(cfg.encoder_mode) + " needs an image dataset");
    }
    encoder::CaVitConfig ec = cfg.encoder;
    ec.channels = ds.geometry.channels;
    ec.side = ds.geometry.side;
    ec.cohorts = ds.cohorts;
    encoder::PretrainConfig pc;
    pc.epochs = cfg.pretrain_epochs;
    pc.batch_size = cfg.pretrain_batch_size;
    pc.adam.lr = cfg.pretrain_lr;
    pc.seed = fold_seed(cfg.seed, fold, kPretrain);
    pc.mode = cfg.encoder_mode == EncoderMode::Cavit ? attention::QueryMode::CohortAware : attention::QueryMode::DatasetOnly;
    pc.clip = cfg.clip_weights;
    auto pr = encoder::pretrain_encoder(ds, ec, pc, split.train);
    res.pretrain_curve = pr.loss_curve;
    enc = std::move(pr.encoder);
    log::info("pretrain_done").kv("fold", fold).kv("final_loss", res.pretrain_curve.empty() ? 0.0 : res.pretrain_curve.back());
    encoded = encoder::encode_dataset(ds, *enc);
    feats = &encoded;
  } else if (ds.geometry.kind != data::TileKind::Feature) {
    throw ConfigError("encoder mode precomputed-features needs a feature dataset");
  }

  const std::size_t d = feats->geometry.feature_dim;
  MilState state(mil_config(cfg, d, ds.classes), diff::AdamConfig{cfg.mil_lr});
  {
    Rng rng(fold_seed(cfg.seed, fold, kMilInit));
    state.model.init(state.params, rng);
  }
  std::optional<mi::MIEstimatorState> adversary;
  if (cfg.adversary && cfg.lambda > 0.0) {
    mi::MiConfig mc;
    mc.network = {d, ds.cohorts, cfg.mi_hidden};
    mc.tau = cfg.tau;
    mc.adam.lr = cfg.adversary_lr;
    adversary.emplace(mc);
    Rng rng(fold_seed(cfg.seed, fold, kAdversaryInit));
    adversary->init(rng);
  }

  // Slide weights over the training partition, clipped once.
  std::vector<balance::HierarchyRecord> records;
  for (std::size_t b : split.train) {
    const auto& bag = ds.bags[b];
    records.push_back({bag.cohort, bag.slide_id, bag.label, bag.num_tiles});
  }
  std::vector<double> weights = balance::mil_weights(records);
  for (std::size_t i = 0; i < weights.size(); ++i) weights[i] *= ds.bags[split.train[i]].weight;
  if (cfg.clip_weights && weights.size() >= 2) weights = balance::clip_weights(weights);

  Rng shuffle(fold_seed(cfg.seed, fold, kShuffle));
  Rng subsample(fold_seed(cfg.seed, fold, kSubsample));
  std::vector<Checkpoint> candidates;
  std::vector<std::size_t> order(split.train.size());

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle);
    EpochRecord er;
    er.epoch = epoch;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<BatchItem> batch;
      for (std::size_t i = start; i < end; ++i) {
        const data::Bag& bag = feats->bags[split.train[order[i]]];
        const auto tiles = mil::subsample_instances(bag.num_tiles, cfg.max_instances, subsample);
        batch.push_back({data::bag_features(bag, feats->geometry, tiles), bag.cohort, bag.label, weights[order[i]]});
      }
      const StepRecord rec = train_step(batch, state, adversary ? &*adversary : nullptr, cfg, ds.cohorts);
      er.loss_mil += rec.loss_mil;
      er.loss_mi += rec.loss_mi;
      er.loss_total += rec.loss_total;
      er.adversary_estimate += rec.adversary_estimate;
      er.mi_steps += rec.mi_applied ? 1 : 0;
      ++steps;
    }
    er.loss_mil /= static_cast<double>(steps);
    er.loss_total /= static_cast<double>(steps);
    if (er.mi_steps) {
      er.loss_mi /= static_cast<double>(er.mi_steps);
      er.adversary_estimate /= static_cast<double>(er.mi_steps);
    }
    if (!split.val.empty()) {
      er.validation = compute_metrics(predict(state.model, {state.params}, *feats, split.val), ds.classes, ds.cohorts);
    }

    Checkpoint ck;
    ck.params = state.params;
    if (adversary) ck.params.merge(adversary->params);
    if (enc) ck.params.merge(enc->params);
    ck.epoch = epoch;
    if (er.validation.auc) ck.metrics["val_auc"] = *er.validation.auc;
    if (er.validation.balanced_accuracy) ck.metrics["val_balanced_accuracy"] = *er.validation.balanced_accuracy;
    ck.info = {{"fold", static_cast<std::int64_t>(fold)},
               {"cohorts", static_cast<std::int64_t>(ds.cohorts)},
               {"classes", static_cast<std::int64_t>(ds.classes)},
               {"feature_dim", static_cast<std::int64_t>(d)},
               {"image_tiles", ds.geometry.kind == data::TileKind::Image ? 1 : 0},
               {"channels", static_cast<std::int64_t>(ds.geometry.channels)},
               {"side", static_cast<std::int64_t>(ds.geometry.side)}};
    ck.config_json = inputs.config_json;
    candidates.push_back(std::move(ck));

    log::info("epoch_end")
        .kv("fold", fold)
        .kv("epoch", epoch)
        .kv("loss_mil", er.loss_mil)
        .kv("loss_mi", er.loss_mi)
        .kv("loss_total", er.loss_total)
        .kv("val_auc", er.validation.auc ? *er.validation.auc : -1.0);
    res.log.push_back(std::move(er));
  }

  const bool any_val = std::any_of(candidates.begin(), candidates.end(),
                                   [](const Checkpoint& c) { return c.metrics.count("val_auc") != 0; });
  if (any_val) {
    res.ensemble = bag_models(candidates, cfg.top_k);
  } else {
    log::warn("no_validation_auc").kv("fold", fold).kv("fallback", "last epochs");
    for (std::size_t i = candidates.size(); i-- > 0 && res.ensemble.size() < cfg.top_k;) {
      res.ensemble.push_back(candidates[i]);
    }
  }
  res.validation = res.log.at(res.ensemble.front().epoch - 1).validation;

  std::vector<ParameterSet> members;
  for (const auto& ck : res.ensemble) members.push_back(ck.params.with_prefix("mil."));
  if (!split.test.empty()) {
    res.test = compute_metrics(predict(state.model, members, *feats, split.test), ds.classes, ds.cohorts);
    ProbeConfig pc = cfg.probe;
    pc.seed = fold_seed(cfg.seed, fold, kProbe);
    res.test.probe_auc = probe_auc(state.model, members.front(), *feats, split.test, pc);
  }
  res.test.loss_mil = res.log.back().loss_mil;
  res.test.loss_mi = res.log.back().loss_mi;
  res.test.loss_total = res.log.back().loss_total;
  return res;
}

std::vector<FoldResult> cross_validate(const FoldInputs& inputs, const TrainConfig& config) {
  config.validate();
  if (!inputs.dataset) throw ConfigError("cross_validate: no dataset");
  const auto splits = data::stratified_patient_kfold(*inputs.dataset, config.folds, config.seed, config.val_fraction);
  std::vector<FoldResult> out;
  for (std::size_t f = 0; f < splits.size(); ++f) out.push_back(train_fold(inputs, splits[f], f, config));
  return out;
}

data::Dataset mil_features(const data::Dataset& dataset, const std::optional<encoder::EncoderParams>& enc) {
  return enc ? encoder::encode_dataset(dataset, *enc) : dataset;
}

LoadedModel load_model(const std::vector<Checkpoint>& checkpoints, const data::Dataset& dataset) {
  if (checkpoints.empty()) throw ConfigError("load_model: no checkpoints");
  const Checkpoint& first = checkpoints.front();
  RunConfig rc;
  try {
    apply_json(rc, first.config_json);
  } catch (const ConfigError& e) {
    throw MismatchError(std::string("checkpoint configuration is not usable: ") + e.what());
  }
  auto info = [&](const Checkpoint& ck, const char* key) -> std::int64_t {
    auto it = ck.info.find(key);
    if (it == ck.info.end()) throw MismatchError(std::string("checkpoint lacks '") + key + "'");
    return it->second;
  };
  for (const auto& ck : checkpoints) {
    if (ck.config_json != first.config_json) throw MismatchError("ensemble members were trained with different configurations");
    for (const char* key : {"fold", "cohorts", "classes", "feature_dim", "image_tiles"}) {
      if (info(ck, key) != info(first, key)) throw MismatchError(std::string("ensemble members disagree on ") + key);
    }
  }
  const auto cohorts = static_cast<std::size_t>(info(first, "cohorts"));
  const auto classes = static_cast<std::size_t>(info(first, "classes"));
  const auto dim = static_cast<std::size_t>(info(first, "feature_dim"));
  if (cohorts != dataset.cohorts || classes != dataset.classes) {
    throw MismatchError("model was trained on " + std::to_string(cohorts) + " cohorts / " + std::to_string(classes) +
                        " classes, data has " + std::to_string(dataset.cohorts) + " / " +
                        std::to_string(dataset.classes));
  }
  const bool image = info(first, "image_tiles") != 0;
  if (image != (dataset.geometry.kind == data::TileKind::Image)) {
    throw MismatchError(std::string("model expects ") + (image ? "image" : "feature") + " tiles");
  }
  if (image && (static_cast<std::size_t>(info(first, "channels")) != dataset.geometry.channels ||
                static_cast<std::size_t>(info(first, "side")) != dataset.geometry.side)) {
    throw MismatchError("model expects a different tile geometry");
  }
  if (!image && dim != dataset.geometry.feature_dim) {
    throw MismatchError("model expects " + std::to_string(dim) + "-dimensional features, data has " +
                        std::to_string(dataset.geometry.feature_dim));
  }

  auto check_layout = [](const ParameterSet& want, const ParameterSet& got, const char* what) {
    if (want.size() != got.size()) throw MismatchError(std::string(what) + " parameter count differs from the configuration");
    for (const auto& [name, t] : want) {
      if (!got.contains(name) || !got.at(name).same_shape(t)) {
        throw MismatchError(std::string(what) + " parameter '" + name + "' is missing or has the wrong shape");
      }
    }
  };

  LoadedModel lm{rc.train, first.config_json, mil::MilModel(mil_config(rc.train, dim, classes)), {}, std::nullopt,
                 static_cast<std::size_t>(info(first, "fold"))};
  ParameterSet reference;
  {
    Rng rng(0);
    lm.model.init(reference, rng);
  }
  for (const auto& ck : checkpoints) {
    ParameterSet p = ck.params.with_prefix("mil.");
    check_layout(reference, p, "MIL");
    lm.members.push_back(std::move(p));
  }
  if (rc.train.encoder_mode != EncoderMode::PrecomputedFeatures) {
    if (!image) throw MismatchError("model has an encoder but the data holds features");
    encoder::CaVitConfig ec = rc.train.encoder;
    ec.channels = dataset.geometry.channels;
    ec.side = dataset.geometry.side;
    ec.cohorts = cohorts;
    const attention::QueryMode mode = rc.train.encoder_mode == EncoderMode::Cavit ? attention::QueryMode::CohortAware : attention::QueryMode::DatasetOnly;
    encoder::EncoderParams ep = encoder::init_encoder(ec, mode, 0);
    ParameterSet stored = first.params.with_prefix("enc.");
    check_layout(ep.params, stored, "encoder");
    ep.params = std::move(stored);
    lm.encoder = std::move(ep);
  } else if (image) {
    throw MismatchError("model has no encoder but the data holds images");
  }
  return lm;
}

MetricsReport evaluate(const LoadedModel& loaded, const data::Dataset& features, const std::vector<std::size_t>& bags) {
  MetricsReport r = compute_metrics(predict(loaded.model, loaded.members, features, bags), features.classes, features.cohorts);
  ProbeConfig pc = loaded.config.probe;
  pc.seed = fold_seed(loaded.config.seed, loaded.fold, kProbe);
  r.probe_auc = probe_auc(loaded.model, loaded.members.front(), features, bags, pc);
  return r;
}

// ---------------------------------------------------------------- reports

namespace {

json metrics_object(const MetricsReport& r) {
  json cohort_auc = json::object(), cohort_bacc = json::object();
  for (const auto& [c, v] : r.cohort_auc) cohort_auc[std::to_string(c)] = opt(v);
  for (const auto& [c, v] : r.cohort_balanced_accuracy) cohort_bacc[std::to_string(c)] = opt(v);
  return {{"patients", r.patients},
          {"auc", opt(r.auc)},
          {"balanced_accuracy", opt(r.balanced_accuracy)},
          {"cohort_auc", cohort_auc},
          {"cohort_balanced_accuracy", cohort_bacc},
          {"probe_auc", opt(r.probe_auc)},
          {"loss_mil", r.loss_mil},
          {"loss_mi", r.loss_mi},
          {"loss_total", r.loss_total}};
}

struct Summary {
  std::vector<double> values;
  std::optional<double> mean() const {
    if (values.empty()) return std::nullopt;
    return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  }
  std::optional<double> stddev() const {
    if (values.size() < 2) return values.empty() ? std::nullopt : std::optional<double>(0.0);
    const double m = *mean();
    double s = 0.0;
    for (double v : values) s += (v - m) * (v - m);
    return std::sqrt(s / static_cast<double>(values.size() - 1));
  }
  void add(const std::optional<double>& v) {
    if (v) values.push_back(*v);
  }
  json to_json() const { return {{"mean", opt(mean())}, {"std", opt(stddev())}, {"n", values.size()}, {"values", values}}; }
  std::string text() const {
    if (values.empty()) return "undefined";
    return fmt(mean()) + " +/- " + fmt(stddev());
  }
};

std::map<std::string, Summary> summarize(const std::vector<FoldResult>& folds) {
  std::map<std::string, Summary> s;
  for (const auto& f : folds) {
    s["test_auc"].add(f.test.auc);
    s["test_balanced_accuracy"].add(f.test.balanced_accuracy);
    s["probe_auc"].add(f.test.probe_auc);
    s["val_auc"].add(f.validation.auc);
    for (const auto& [c, v] : f.test.cohort_auc) s["test_auc_cohort_" + std::to_string(c)].add(v);
    for (const auto& [c, v] : f.test.cohort_balanced_accuracy) {
      s["test_balanced_accuracy_cohort_" + std::to_string(c)].add(v);
    }
  }
  return s;
}

}  // namespace

std::string metrics_json(const MetricsReport& report) { return metrics_object(report).dump(2) + "\n"; }

std::string fold_report_json(const FoldResult& f) {
  json selected = json::array(), selected_auc = json::array();
  for (const auto& ck : f.ensemble) {
    selected.push_back(ck.epoch);
    auto it = ck.metrics.find("val_auc");
    selected_auc.push_back(it == ck.metrics.end() ? json(nullptr) : json(it->second));
  }
  json j = {{"fold", f.fold},
            {"validation", metrics_object(f.validation)},
            {"test", metrics_object(f.test)},
            {"selected_epochs", selected},
            {"selected_val_auc", selected_auc},
            {"train_patients", f.split.train_patients.size()},
            {"val_patients", f.split.val_patients.size()},
            {"test_patients", f.split.test_patients.size()},
            {"pretrain_loss", f.pretrain_curve}};
  return j.dump(2) + "\n";
}

std::string fold_report_text(const FoldResult& f) {
  std::string out = "fold " + std::to_string(f.fold) + "\n";
  out += "partition   patients  auc        b-acc      probe_auc\n";
  char buf[160];
  std::snprintf(buf, sizeof buf, "validation  %-8zu  %-9s  %-9s  %s\n", f.validation.patients, fmt(f.validation.auc).c_str(),
                fmt(f.validation.balanced_accuracy).c_str(), fmt(f.validation.probe_auc).c_str());
  out += buf;
  std::snprintf(buf, sizeof buf, "test        %-8zu  %-9s  %-9s  %s\n", f.test.patients, fmt(f.test.auc).c_str(),
                fmt(f.test.balanced_accuracy).c_str(), fmt(f.test.probe_auc).c_str());
  out += buf;
  for (const auto& [c, v] : f.test.cohort_auc) {
    auto it = f.test.cohort_balanced_accuracy.find(c);
    std::snprintf(buf, sizeof buf, "test cohort %zu  auc %s  b-acc %s\n", c, fmt(v).c_str(),
                  fmt(it == f.test.cohort_balanced_accuracy.end() ? std::nullopt : it->second).c_str());
    out += buf;
  }
  out += "bagged epochs:";
  for (const auto& ck : f.ensemble) out += " " + std::to_string(ck.epoch);
  out += "\n";
  return out;
}

std::string aggregate_json(const std::vector<FoldResult>& folds) {
  json j = json::object();
  j["folds"] = folds.size();
  for (const auto& [k, s] : summarize(folds)) j[k] = s.to_json();
  return j.dump(2) + "\n";
}

std::string aggregate_text(const std::vector<FoldResult>& folds) {
  std::string out = "metric (mean +/- std over " + std::to_string(folds.size()) + " folds)\n";
  for (const auto& [k, s] : summarize(folds)) out += k + "  " + s.text() + "\n";
  return out;
}

std::string train_log_text(const FoldResult& f) {
  std::string out;
  char buf[320];
  for (std::size_t i = 0; i < f.pretrain_curve.size(); ++i) {
    std::snprintf(buf, sizeof buf, "phase=pretrain epoch=%zu loss=%.9g\n", i + 1, f.pretrain_curve[i]);
    out += buf;
  }
  for (const auto& e : f.log) {
    std::snprintf(buf, sizeof buf,
                  "phase=mil epoch=%zu loss_mil=%.9g loss_mi=%.9g loss_total=%.9g adversary_estimate=%.9g mi_steps=%zu "
                  "val_auc=%s val_balanced_accuracy=%s\n",
                  e.epoch, e.loss_mil, e.loss_mi, e.loss_total, e.adversary_estimate, e.mi_steps,
                  fmt(e.validation.auc).c_str(), fmt(e.validation.balanced_accuracy).c_str());
    out += buf;
  }
  return out;
}

std::string split_json(const data::FoldSplit& s) {
  json j = {{"train", s.train_patients}, {"val", s.val_patients}, {"test", s.test_patients},
            {"train_bags", s.train},     {"val_bags", s.val},     {"test_bags", s.test}};
  return j.dump(2) + "\n";
}

void write_cv_outputs(const fs::path& dir, const std::vector<FoldResult>& folds) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  for (const auto& f : folds) {
    const fs::path fd = dir / ("fold_" + std::to_string(f.fold));
    fs::create_directories(fd, ec);
    if (ec) throw IoError("cannot create '" + fd.string() + "': " + ec.message());
    write_text(fd / "train_log.txt", train_log_text(f));
    write_text(fd / "split.json", split_json(f.split));
    for (std::size_t r = 0; r < f.ensemble.size(); ++r) {
      save_checkpoint(f.ensemble[r], fd / ("model_rank" + std::to_string(r + 1) + ".ckpt"));
    }
    write_text(fd / "report.json", fold_report_json(f));
    write_text(fd / "report.txt", fold_report_text(f));
  }
  write_text(dir / "aggregate.json", aggregate_json(folds));
  write_text(dir / "aggregate.txt", aggregate_text(folds));
}

}  // namespace mcmil::train
