// SPDX-License-Identifier: Apache-2.0
#include "mcmil/mil/mil.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mcmil/error.hpp"

namespace mcmil::mil {

namespace {

const char* kHeadW = "mil.head.w";
const char* kHeadB = "mil.head.b";
const char* kAbV = "mil.abmil.v";
const char* kAbU = "mil.abmil.u";
const char* kAbBv = "mil.abmil.bv";
const char* kAbBu = "mil.abmil.bu";
const char* kAbW = "mil.abmil.w";
const char* kPoolQ = "mil.pool.q";

}  // namespace

std::string to_string(AggregatorKind kind) {
  switch (kind) {
    case AggregatorKind::Mean: return "mean";
    case AggregatorKind::Max: return "max";
    case AggregatorKind::Abmil: return "abmil";
    case AggregatorKind::Mha: return "mha";
  }
  return "?";
}

AggregatorKind parse_aggregator(const std::string& name) {
  if (name == "mean") return AggregatorKind::Mean;
  if (name == "max") return AggregatorKind::Max;
  if (name == "abmil") return AggregatorKind::Abmil;
  if (name == "mha") return AggregatorKind::Mha;
  throw ConfigError("unknown aggregator '" + name + "' (expected mean, max, abmil or mha)");
}

void MilConfig::validate() const {
  if (dim == 0) throw ConfigError("mil: dim must be positive");
  if (classes < 2) throw ConfigError("mil: at least two classes required");
  if (kind == AggregatorKind::Abmil && attn_hidden == 0) throw ConfigError("mil: attn_hidden must be positive");
  if (kind == AggregatorKind::Mha && (heads == 0 || dim % heads != 0)) {
    throw ConfigError("mil: dim must be divisible by heads");
  }
  if (max_instances == 0) throw ConfigError("mil: max_instances must be positive");
}

MilModel::MilModel(MilConfig config) : config_(config) {
  config_.validate();
  if (config_.kind == AggregatorKind::Mha) {
    attention::McaaConfig mc;
    mc.dim = config_.dim;
    mc.heads = config_.heads;
    mc.head_dim = config_.dim / config_.heads;
    mc.cohorts = 0;
    mhsa_.emplace("mil.mhsa", mc);
  }
}

void MilModel::init(ParameterSet& params, Rng& rng) const {
  const double s = 1.0 / std::sqrt(static_cast<double>(config_.dim));
  if (config_.kind == AggregatorKind::Abmil) {
    params.add(kAbV, uniform_tensor(config_.dim, config_.attn_hidden, s, rng));
    params.add(kAbU, uniform_tensor(config_.dim, config_.attn_hidden, s, rng));
    params.add(kAbBv, Tensor(1, config_.attn_hidden));
    params.add(kAbBu, Tensor(1, config_.attn_hidden));
    params.add(kAbW, uniform_tensor(config_.attn_hidden, 1, 1.0 / std::sqrt(static_cast<double>(config_.attn_hidden)), rng));
  } else if (config_.kind == AggregatorKind::Mha) {
    mhsa_->init(params, rng);
    params.add(kPoolQ, uniform_tensor(1, config_.dim, s, rng));
  }
  params.add(kHeadW, uniform_tensor(config_.dim, config_.classes, s, rng));
  params.add(kHeadB, Tensor(1, config_.classes));
}

Var MilModel::aggregate(Graph& g, const ParameterSet& params, Var features) const {
  const Tensor& f = g.value(features);
  if (f.rows() == 0) throw ConfigError("aggregate: empty bag");
  if (f.cols() != config_.dim) {
    throw ShapeError("aggregate: features have " + std::to_string(f.cols()) + " columns, expected " +
                     std::to_string(config_.dim));
  }
  switch (config_.kind) {
    case AggregatorKind::Mean:
      return g.mean_rows(features);
    case AggregatorKind::Max:
      return g.max_rows(features);
    case AggregatorKind::Abmil: {
      Var v = g.tanh(g.add_row(g.matmul(features, g.param(params, kAbV)), g.param(params, kAbBv)));
      Var u = g.sigmoid(g.add_row(g.matmul(features, g.param(params, kAbU)), g.param(params, kAbBu)));
      Var logit = g.matmul(g.mul(v, u), g.param(params, kAbW));  // n x 1
      Var a = g.softmax_rows(g.transpose(logit));                  // 1 x n
      return g.matmul(a, features);
    }
    case AggregatorKind::Mha: {
      Var y = g.add(features, mhsa_->forward(g, params, features, CohortId{0}, attention::QueryMode::DatasetOnly));
      Var scores = g.scale(g.matmul_nt(g.param(params, kPoolQ), y), 1.0 / std::sqrt(static_cast<double>(config_.dim)));
      return g.matmul(g.softmax_rows(scores), y);
    }
  }
  throw ConfigError("aggregate: unknown aggregator");
}

Var MilModel::logits(Graph& g, const ParameterSet& params, Var z) const {
  if (g.value(z).cols() != config_.dim) {
    throw ShapeError("predict: representation has " + std::to_string(g.value(z).cols()) + " entries, head expects " +
                     std::to_string(config_.dim));
  }
  return g.add_row(g.matmul(z, g.param(params, kHeadW)), g.param(params, kHeadB));
}

Tensor MilModel::representation(const ParameterSet& params, const Tensor& features) const {
  Graph g;
  return g.value(aggregate(g, params, g.constant(features)));
}

Tensor MilModel::predict(const ParameterSet& params, const Tensor& features) const {
  Graph g;
  return g.value(g.softmax_rows(logits(g, params, aggregate(g, params, g.constant(features)))));
}

Tensor MilModel::predict_from_representation(const ParameterSet& params, const Tensor& z) const {
  Graph g;
  return g.value(g.softmax_rows(logits(g, params, g.constant(z))));
}

std::vector<std::size_t> subsample_instances(std::size_t n, std::size_t max_instances, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (n <= max_instances) return idx;
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < max_instances; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(max_instances);
  std::sort(idx.begin(), idx.end());
  return idx;
}

Var weighted_cross_entropy(Graph& g, Var logits, const std::vector<std::size_t>& labels,
                           const std::vector<double>& weights) {
  const Tensor& l = g.value(logits);
  if (labels.size() != l.rows() || weights.size() != l.rows()) {
    throw ShapeError("mil_loss: batch has " + std::to_string(l.rows()) + " rows but " +
                     std::to_string(labels.size()) + " labels and " + std::to_string(weights.size()) + " weights");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw NumericError("mil_loss: weights must be finite and non-negative");
    total += w;
  }
  if (!(total > 0.0)) throw NumericError("mil_loss: all weights are zero");
  for (std::size_t y : labels) {
    if (y >= l.cols()) throw ConfigError("mil_loss: label out of range");
  }
  Var picked = g.gather_cols(g.log_softmax_rows(logits), labels);  // B x 1
  Var weighted = g.mul(picked, g.constant(Tensor::column(weights)));
  return g.scale(g.sum_all(weighted), -1.0 / total);
}

double mil_loss(const std::vector<std::vector<double>>& probabilities, const std::vector<std::size_t>& labels,
                const std::vector<double>& weights) {
  if (probabilities.size() != labels.size() || labels.size() != weights.size()) {
    throw ShapeError("mil_loss: batch lengths differ");
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!(weights[i] >= 0.0)) throw NumericError("mil_loss: negative weight");
    if (labels[i] >= probabilities[i].size()) throw ConfigError("mil_loss: label out of range");
    if (weights[i] == 0.0) continue;
    num += weights[i] * -std::log(probabilities[i][labels[i]]);
    den += weights[i];
  }
  if (!(den > 0.0)) throw NumericError("mil_loss: all weights are zero");
  return num / den;
}

}  // namespace mcmil::mil
