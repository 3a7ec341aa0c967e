// SPDX-License-Identifier: Apache-2.0
#include "mcmil/mi/adversary.hpp"

#include <cmath>

#include "mcmil/error.hpp"

namespace mcmil::mi {

namespace {

const char* kZw = "mi.z.w";
const char* kZb = "mi.z.b";
const char* kCw = "mi.c.w";
const char* kCb = "mi.c.b";
const char* kJz = "mi.joint.wz";
const char* kJc = "mi.joint.wc";
const char* kJb = "mi.joint.b";
const char* kOw = "mi.out.w";
const char* kOb = "mi.out.b";

}  // namespace

void ScoreNetworkConfig::validate() const {
  if (z_dim == 0 || c_dim == 0) throw ConfigError("score network: input widths must be positive");
  if (hidden == 0) throw ConfigError("score network: hidden width must be positive");
}

ScoreNetwork::ScoreNetwork(ScoreNetworkConfig config) : config_(config) { config_.validate(); }

void ScoreNetwork::init(ParameterSet& params, Rng& rng) const {
  const std::size_t h = config_.hidden;
  auto fan = [](std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); };
  params.add(kZw, uniform_tensor(config_.z_dim, h, fan(config_.z_dim), rng));
  params.add(kZb, Tensor(1, h));
  params.add(kCw, uniform_tensor(config_.c_dim, h, fan(config_.c_dim), rng));
  params.add(kCb, Tensor(1, h));
  params.add(kJz, uniform_tensor(h, h, fan(2 * h), rng));
  params.add(kJc, uniform_tensor(h, h, fan(2 * h), rng));
  params.add(kJb, Tensor(1, h));
  params.add(kOw, uniform_tensor(h, 1, fan(h), rng));
  params.add(kOb, Tensor(1, 1));
}

Var ScoreNetwork::bind(Graph& g, const ParameterSet& params, const char* name, bool frozen) const {
  return frozen ? g.frozen(params, name) : g.param(params, name);
}

void ScoreNetwork::hidden_pre(Graph& g, const ParameterSet& params, Var z, Var c, bool frozen, Var* hz,
                              Var* hc) const {
  if (g.value(z).cols() != config_.z_dim || g.value(c).cols() != config_.c_dim) {
    throw ShapeError("score: inputs are " + g.value(z).shape_string() + " and " + g.value(c).shape_string() +
                     ", expected widths " + std::to_string(config_.z_dim) + " and " + std::to_string(config_.c_dim));
  }
  if (g.value(z).rows() != g.value(c).rows()) throw ShapeError("score: z and c batch sizes differ");
  Var a = g.tanh(g.add_row(g.matmul(z, bind(g, params, kZw, frozen)), bind(g, params, kZb, frozen)));
  Var b = g.tanh(g.add_row(g.matmul(c, bind(g, params, kCw, frozen)), bind(g, params, kCb, frozen)));
  *hz = g.matmul(a, bind(g, params, kJz, frozen));
  *hc = g.add_row(g.matmul(b, bind(g, params, kJc, frozen)), bind(g, params, kJb, frozen));
}

Var ScoreNetwork::scores(Graph& g, const ParameterSet& params, Var z, Var c, bool frozen) const {
  Var hz, hc;
  hidden_pre(g, params, z, c, frozen, &hz, &hc);
  Var u = g.tanh(g.add(hz, hc));
  return g.add_row(g.matmul(u, bind(g, params, kOw, frozen)), bind(g, params, kOb, frozen));
}

Var ScoreNetwork::pair_scores(Graph& g, const ParameterSet& params, Var z, Var c, bool frozen) const {
  Var hz, hc;
  hidden_pre(g, params, z, c, frozen, &hz, &hc);
  Var u = g.tanh(g.pairwise_sum(hz, hc));
  return g.add_row(g.matmul(u, bind(g, params, kOw, frozen)), bind(g, params, kOb, frozen));
}

double ScoreNetwork::score(const ParameterSet& params, const Tensor& z, const Tensor& c) const {
  Graph g;
  return g.value(scores(g, params, g.constant(z), g.constant(c), true))[0];
}

Tensor one_hot(const std::vector<CohortId>& cohorts, std::size_t k) {
  Tensor t(cohorts.size(), k);
  for (std::size_t i = 0; i < cohorts.size(); ++i) {
    check_cohort(cohorts[i], k);
    t(i, cohorts[i].value) = 1.0;
  }
  return t;
}

bool single_cohort(const std::vector<CohortId>& cohorts) {
  for (const CohortId& c : cohorts) {
    if (c != cohorts.front()) return false;
  }
  return true;
}

namespace {

void pair_masks(std::size_t B, Tensor& diag, Tensor& off) {
  diag = Tensor(B * B, 1);
  off = Tensor(B * B, 1);
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t j = 0; j < B; ++j) (i == j ? diag : off)[i * B + j] = 1.0;
  }
}

std::size_t checked_batch(const Graph& g, Var z) {
  const std::size_t B = g.value(z).rows();
  if (B < 2) throw ConfigError("MI estimate needs a batch of at least 2, got " + std::to_string(B));
  return B;
}

Var smile_from_scores(Graph& g, Var t, std::size_t B, double tau) {
  if (!(tau > 0.0)) throw ConfigError("MI estimate: tau must be positive");
  Tensor diag, off;
  pair_masks(B, diag, off);
  Var positive = g.scale(g.sum_all(g.mul(t, g.constant(diag))), 1.0 / static_cast<double>(B));
  Var et = g.exp(std::isinf(tau) ? t : g.clip(t, -tau, tau));
  Var negative = g.scale(g.sum_all(g.mul(et, g.constant(off))), 1.0 / static_cast<double>(B * (B - 1)));
  return g.sub(positive, g.log(negative));
}

Var js_from_scores(Graph& g, Var t, std::size_t B) {
  Tensor diag, off;
  pair_masks(B, diag, off);
  Var positive = g.scale(g.sum_all(g.mul(g.softplus(g.scale(t, -1.0)), g.constant(diag))), -1.0 / static_cast<double>(B));
  Var negative = g.scale(g.sum_all(g.mul(g.softplus(t), g.constant(off))), 1.0 / static_cast<double>(B * (B - 1)));
  return g.sub(positive, negative);
}

}  // namespace

Var smile_graph(Graph& g, const ScoreNetwork& net, const ParameterSet& params, Var z, Var c, double tau,
                bool frozen) {
  const std::size_t B = checked_batch(g, z);
  return smile_from_scores(g, net.pair_scores(g, params, z, c, frozen), B, tau);
}

Var js_graph(Graph& g, const ScoreNetwork& net, const ParameterSet& params, Var z, Var c, bool frozen) {
  const std::size_t B = checked_batch(g, z);
  return js_from_scores(g, net.pair_scores(g, params, z, c, frozen), B);
}

double smile_estimate(const ScoreNetwork& net, const ParameterSet& params, const Tensor& z, const Tensor& c,
                      double tau) {
  Graph g;
  return g.value(smile_graph(g, net, params, g.constant(z), g.constant(c), tau, true))[0];
}

double mine_estimate(const ScoreNetwork& net, const ParameterSet& params, const Tensor& z, const Tensor& c) {
  return smile_estimate(net, params, z, c, kNoClip);
}

MIEstimatorState::MIEstimatorState(const MiConfig& config)
    : net(config.network), optimizer(config.adam), tau(config.tau) {
  if (!(tau > 0.0)) throw ConfigError("MI estimator: tau must be positive");
}

void MIEstimatorState::init(Rng& rng) { net.init(params, rng); }

double adversary_update(MIEstimatorState& state, const Tensor& z, const Tensor& c) {
  Graph g;
  Var zv = g.constant(z);
  const std::size_t B = checked_batch(g, zv);
  Var t = state.net.pair_scores(g, state.params, zv, g.constant(c), false);
  const double value = g.value(smile_from_scores(g, t, B, state.tau))[0];
  if (!std::isfinite(value)) throw NumericError("adversary_update: non-finite MI estimate");
  if (state.optimizer.config().lr == 0.0) return value;
  g.backward(js_from_scores(g, t, B));
  auto grads = g.param_gradients(state.params);
  for (auto& [name, v] : grads) {
    for (double& x : v.data()) x = -x;  // ascent
  }
  state.optimizer.step(state.params, grads);
  return value;
}

Var mi_loss(Graph& g, const MIEstimatorState& state, Var z, Var c, double sign) {
  Var est = smile_graph(g, state.net, state.params, z, c, state.tau, true);
  return sign == 1.0 ? est : g.scale(est, sign);
}

}  // namespace mcmil::mi
