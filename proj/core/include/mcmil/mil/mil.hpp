// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "mcmil/attention/cohort_attention.hpp"
#include "mcmil/diff/graph.hpp"
#include "mcmil/util/rng.hpp"

namespace mcmil::mil {

using diff::Graph;
using diff::ParameterSet;
using diff::Tensor;
using diff::Var;

enum class AggregatorKind { Mean, Max, Abmil, Mha };

std::string to_string(AggregatorKind kind);
/// Accepts "mean", "max", "abmil", "mha"; throws ConfigError otherwise.
AggregatorKind parse_aggregator(const std::string& name);

struct MilConfig {
  AggregatorKind kind = AggregatorKind::Mha;
  std::size_t dim = 32;
  std::size_t classes = 2;
  /// Gated-attention hidden width (abmil).
  std::size_t attn_hidden = 16;
  /// Self-attention heads (mha); dim must be divisible by it.
  std::size_t heads = 4;
  /// Bags larger than this are subsampled per epoch.
  std::size_t max_instances = 64;

  void validate() const;
};

/// Aggregator A and linear softmax head H. Parameter names start with
/// "mil.". The slide representation keeps the feature width d.
///
/// mean / max: column mean / max of the instance rows.
/// abmil: gated attention, a = softmax_j(w^T (tanh(V f_j) * sigmoid(U f_j))),
///   z = sum_j a_j f_j.
/// mha: y = f + MHSA(f) over the instances, then attention pooling with a
///   learned query, z = softmax(q y^T / sqrt(d)) y.
class MilModel {
 public:
  explicit MilModel(MilConfig config);

  void init(ParameterSet& params, Rng& rng) const;

  /// n x d instances -> 1 x d representation.
  Var aggregate(Graph& g, const ParameterSet& params, Var features) const;
  /// 1 x d (or B x d) representations -> logits with one column per class.
  Var logits(Graph& g, const ParameterSet& params, Var z) const;

  /// Forward-only helpers.
  Tensor representation(const ParameterSet& params, const Tensor& features) const;
  Tensor predict(const ParameterSet& params, const Tensor& features) const;
  Tensor predict_from_representation(const ParameterSet& params, const Tensor& z) const;

  const MilConfig& config() const { return config_; }

 private:
  MilConfig config_;
  std::optional<attention::MultiheadCohortAttention> mhsa_;
};

/// Sorted indices of at most `max_instances` tiles drawn uniformly without
/// replacement; all indices when the bag is small enough.
std::vector<std::size_t> subsample_instances(std::size_t n, std::size_t max_instances, Rng& rng);

/// Weighted cross-entropy over B rows of logits:
/// sum_i w_i CE_i / sum_i w_i. Throws NumericError when all weights are 0.
Var weighted_cross_entropy(Graph& g, Var logits, const std::vector<std::size_t>& labels,
                           const std::vector<double>& weights);

/// The same loss on probability vectors.
double mil_loss(const std::vector<std::vector<double>>& probabilities, const std::vector<std::size_t>& labels,
                const std::vector<double>& weights);

}  // namespace mcmil::mil
