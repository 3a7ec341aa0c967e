// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <limits>
#include <vector>

#include "mcmil/diff/adam.hpp"
#include "mcmil/diff/graph.hpp"
#include "mcmil/types.hpp"
#include "mcmil/util/rng.hpp"

namespace mcmil::mi {

using diff::Graph;
using diff::ParameterSet;
using diff::Tensor;
using diff::Var;

inline constexpr double kNoClip = std::numeric_limits<double>::infinity();

struct ScoreNetworkConfig {
  std::size_t z_dim = 32;
  /// Width of the second input: the cohort count for one-hot cohorts.
  std::size_t c_dim = 2;
  std::size_t hidden = 64;

  void validate() const;
};

/// T(z, c): h_z = tanh(z Wz + bz), h_c = tanh(c Wc + bc),
/// T = tanh([h_z, h_c] W1 + b1) w2 + b2. W1 is stored as its z and c halves
/// so all B x B pair scores can share the branch activations.
/// Parameter names start with "mi.".
class ScoreNetwork {
 public:
  explicit ScoreNetwork(ScoreNetworkConfig config);

  void init(ParameterSet& params, Rng& rng) const;

  /// Scores of the aligned pairs (z_i, c_i): B x 1.
  Var scores(Graph& g, const ParameterSet& params, Var z, Var c, bool frozen) const;
  /// Scores of every pair: row i * B + j holds T(z_i, c_j). (B*B) x 1.
  Var pair_scores(Graph& g, const ParameterSet& params, Var z, Var c, bool frozen) const;

  double score(const ParameterSet& params, const Tensor& z, const Tensor& c) const;

  const ScoreNetworkConfig& config() const { return config_; }

 private:
  Var bind(Graph& g, const ParameterSet& params, const char* name, bool frozen) const;
  void hidden_pre(Graph& g, const ParameterSet& params, Var z, Var c, bool frozen, Var* hz, Var* hc) const;

  ScoreNetworkConfig config_;
};

/// One-hot rows for a batch of cohorts.
Tensor one_hot(const std::vector<CohortId>& cohorts, std::size_t k);

/// True when every row of the one-hot batch is the same cohort.
bool single_cohort(const std::vector<CohortId>& cohorts);

/// mean_i T(z_i, c_i) - log( mean_{i != j} exp(clip(T(z_i, c_j), -tau, tau)) ).
/// Clipping the exponent is the same as clipping e^T to [e^-tau, e^tau].
/// tau = kNoClip gives the MINE form. Throws ConfigError when B < 2.
Var smile_graph(Graph& g, const ScoreNetwork& net, const ParameterSet& params, Var z, Var c, double tau,
                bool frozen);

double smile_estimate(const ScoreNetwork& net, const ParameterSet& params, const Tensor& z, const Tensor& c,
                      double tau);
/// Unclipped estimate; an overflowing e^T raises NumericError.
double mine_estimate(const ScoreNetwork& net, const ParameterSet& params, const Tensor& z, const Tensor& c);

struct MiConfig {
  ScoreNetworkConfig network;
  double tau = 5.0;
  diff::AdamConfig adam{};
};

/// Score network parameters, optimizer state and clip bound.
struct MIEstimatorState {
  explicit MIEstimatorState(const MiConfig& config);

  void init(Rng& rng);

  ScoreNetwork net;
  ParameterSet params;
  diff::Adam optimizer;
  double tau;
};

/// Jensen-Shannon bound mean_i -softplus(-T(z_i, c_i)) - mean_{i != j} softplus(T(z_i, c_j)).
/// Its maximizer is the log density ratio, which is also what the SMILE
/// estimate needs, and unlike the clipped estimate it stays bounded in T.
Var js_graph(Graph& g, const ScoreNetwork& net, const ParameterSet& params, Var z, Var c, bool frozen);

/// One ascent step of the score network, following the gradient of the
/// Jensen-Shannon bound (see js_graph); the SMILE estimate is what gets
/// reported.
/// `z` is a plain tensor, so nothing upstream can receive gradient.
/// Returns the estimate before the step.
double adversary_update(MIEstimatorState& state, const Tensor& z, const Tensor& c);

/// sign * SMILE with the score network bound as constants, so gradient
/// reaches `z` only. The default sign +1 makes minimizing the loss push the
/// mutual information down.
Var mi_loss(Graph& g, const MIEstimatorState& state, Var z, Var c, double sign = 1.0);

}  // namespace mcmil::mi
