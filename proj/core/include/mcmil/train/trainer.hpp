// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mcmil/data/dataset.hpp"
#include "mcmil/data/split.hpp"
#include "mcmil/diff/adam.hpp"
#include "mcmil/encoder/cavit.hpp"
#include "mcmil/mi/adversary.hpp"
#include "mcmil/mil/mil.hpp"
#include "mcmil/train/checkpoint.hpp"
#include "mcmil/train/metrics.hpp"
#include "mcmil/train/probe.hpp"

namespace mcmil::train {

enum class EncoderMode { Cavit, PlainVit, PrecomputedFeatures };

std::string to_string(EncoderMode mode);
/// Accepts "cavit", "plain-vit", "precomputed-features".
EncoderMode parse_encoder_mode(const std::string& name);

struct TrainConfig {
  double lambda = 1.0;
  double tau = 5.0;
  double mil_lr = 1e-3;
  double adversary_lr = 1e-3;
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  mil::AggregatorKind aggregator = mil::AggregatorKind::Mha;
  EncoderMode encoder_mode = EncoderMode::PrecomputedFeatures;
  std::size_t folds = 5;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;

  std::size_t mi_hidden = 64;
  /// Coefficient sign of the SMILE estimate in L_MI; +1 minimizes MI.
  double mi_sign = 1.0;
  /// false removes the adversary entirely.
  bool adversary = true;

  std::size_t max_instances = 64;
  std::size_t attn_hidden = 16;
  std::size_t mil_heads = 4;
  bool clip_weights = true;
  std::size_t top_k = 3;

  /// Architecture for the cavit / plain-vit modes; `cohorts` is taken from
  /// the dataset.
  encoder::CaVitConfig encoder{};
  std::size_t pretrain_epochs = 3;
  std::size_t pretrain_batch_size = 32;
  double pretrain_lr = 1e-3;

  ProbeConfig probe{};

  void validate() const;
};

/// One slide prepared for a MIL step (instances already subsampled).
struct BatchItem {
  diff::Tensor features;
  CohortId cohort;
  std::size_t label = 0;
  /// Balancing weight before batch renormalization.
  double weight = 1.0;
};

struct StepRecord {
  double loss_mil = 0.0;
  double loss_mi = 0.0;
  double loss_total = 0.0;
  /// Adversary's estimate before its ascent step (0 when not run).
  double adversary_estimate = 0.0;
  bool mi_applied = false;
};

/// Trainable state of one run.
struct MilState {
  explicit MilState(const mil::MilConfig& config, diff::AdamConfig adam = {});

  mil::MilModel model;
  diff::ParameterSet params;
  diff::Adam optimizer;
};

/// One mini-batch update:
///   1. z_i = A(x_i) for every bag;
///   2. the adversary takes one ascent step on a detached copy of z;
///   3. L_MI is re-estimated with the adversary frozen, gradient into z;
///   4. y_i = H(z_i);
///   5. the MIL parameters descend L = L_MIL + lambda L_MI, where L_MIL uses
///      batch-renormalized weights.
/// Steps 2-3 are skipped when `adversary` is null, lambda is 0, or the
/// batch holds a single cohort; the MI term is then absent from the graph.
StepRecord train_step(const std::vector<BatchItem>& batch, MilState& state, mi::MIEstimatorState* adversary,
                      const TrainConfig& config, std::size_t cohorts);

/// Parameters of one model (MIL and adversary, plus encoder when one was
/// trained) with the metadata needed to reuse it.
using Ensemble = std::vector<Checkpoint>;

/// Indices of the `k` best validation AUCs, best first; ties keep the
/// earlier index. Undefined AUCs rank last. Returns all indices when fewer
/// than `k` are given.
std::vector<std::size_t> select_top(const std::vector<std::optional<double>>& val_auc, std::size_t k);

/// Top-k checkpoints by their "val_auc" metric; logs a warning when fewer
/// than k are available.
Ensemble bag_models(const std::vector<Checkpoint>& checkpoints, std::size_t k = 3);

/// Slide predictions, averaging the members' probability vectors.
/// `features` must be a feature dataset; every instance of a bag is used.
std::vector<SlidePrediction> predict(const mil::MilModel& model, const std::vector<diff::ParameterSet>& members,
                                     const data::Dataset& features, const std::vector<std::size_t>& bags);

/// Slide representations z of the listed bags under one parameter set, N x d.
diff::Tensor representations(const mil::MilModel& model, const diff::ParameterSet& params,
                             const data::Dataset& features, const std::vector<std::size_t>& bags);

struct EpochRecord {
  std::size_t epoch = 0;
  double loss_mil = 0.0;
  double loss_mi = 0.0;
  double loss_total = 0.0;
  double adversary_estimate = 0.0;
  std::size_t mi_steps = 0;
  MetricsReport validation;
};

struct FoldResult {
  std::size_t fold = 0;
  data::FoldSplit split;
  std::vector<EpochRecord> log;
  /// Top-k models, best first.
  Ensemble ensemble;
  /// Pretraining loss per epoch when an encoder was trained.
  std::vector<double> pretrain_curve;
  /// Rank-1 model on the validation patients.
  MetricsReport validation;
  /// Ensemble on the test patients; probe_auc from rank-1 representations.
  MetricsReport test;
};

/// Everything a fold needs besides the split.
struct FoldInputs {
  const data::Dataset* dataset = nullptr;
  std::string config_json = "{}";
};

/// Trains one fold: optional encoder pretraining on the training slides,
/// `epochs` passes of train_step with per-epoch validation, top-k bagging,
/// and test evaluation.
FoldResult train_fold(const FoldInputs& inputs, const data::FoldSplit& split, std::size_t fold,
                      const TrainConfig& config);

/// All folds in order.
std::vector<FoldResult> cross_validate(const FoldInputs& inputs, const TrainConfig& config);

/// MIL model architecture implied by a config and a feature width.
mil::MilConfig mil_config(const TrainConfig& config, std::size_t dim, std::size_t classes);

/// A loaded ensemble ready for evaluation.
struct LoadedModel {
  TrainConfig config;
  std::string config_json;
  mil::MilModel model;
  std::vector<diff::ParameterSet> members;
  std::optional<encoder::EncoderParams> encoder;
  std::size_t fold = 0;
};

/// Rebuilds models from checkpoints. Throws MismatchError when they
/// disagree with each other or with `dataset` (cohorts, classes, tile kind,
/// feature width, parameter names and shapes).
LoadedModel load_model(const std::vector<Checkpoint>& checkpoints, const data::Dataset& dataset);

/// Features for MIL: the dataset itself, or its encoding by `encoder`.
data::Dataset mil_features(const data::Dataset& dataset, const std::optional<encoder::EncoderParams>& encoder);

/// Evaluates a loaded model on the listed bags (probe included when at
/// least two cohorts with enough slides are present).
MetricsReport evaluate(const LoadedModel& loaded, const data::Dataset& features, const std::vector<std::size_t>& bags);

// Reports. JSON objects are emitted with sorted keys; undefined metrics are null.
std::string metrics_json(const MetricsReport& report);
std::string fold_report_json(const FoldResult& fold);
std::string fold_report_text(const FoldResult& fold);
std::string aggregate_json(const std::vector<FoldResult>& folds);
std::string aggregate_text(const std::vector<FoldResult>& folds);
std::string train_log_text(const FoldResult& fold);
std::string split_json(const data::FoldSplit& split);

/// Writes fold_<i>/ (train_log.txt, split.json, model_rank<r>.ckpt,
/// report.json, report.txt) for every fold and aggregate.json/.txt under
/// `dir`.
void write_cv_outputs(const std::filesystem::path& dir, const std::vector<FoldResult>& folds);

}  // namespace mcmil::train
