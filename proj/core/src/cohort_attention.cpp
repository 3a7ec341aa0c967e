// SPDX-License-Identifier: Apache-2.0
#include "mcmil/attention/cohort_attention.hpp"

#include <cmath>

#include "mcmil/error.hpp"

namespace mcmil::attention {

using diff::Tensor;

CohortQueryBank::CohortQueryBank(std::string prefix, std::size_t dim, std::size_t head_dim,
                                 std::size_t cohorts)
    : prefix_(std::move(prefix)), dim_(dim), head_dim_(head_dim), cohorts_(cohorts) {}

void CohortQueryBank::init(ParameterSet& params, Rng& rng) const {
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim_));
  Tensor q_d = uniform_tensor(dim_, head_dim_, scale, rng);
  for (std::size_t c = 0; c < cohorts_; ++c) {
    Tensor q_c = q_d;
    Tensor noise = uniform_tensor(dim_, head_dim_, 1e-3, rng);
    for (std::size_t i = 0; i < q_c.size(); ++i) q_c[i] += noise[i];
    params.add(w_q_c(c), std::move(q_c));
  }
  params.add(w_q_d(), std::move(q_d));
  params.add(w_k(), uniform_tensor(dim_, head_dim_, scale, rng));
  params.add(w_v(), uniform_tensor(dim_, head_dim_, scale, rng));
}

QkvProjection CohortQueryBank::project(Graph& g, const ParameterSet& params, Var x, CohortId c,
                                       bool with_cohort_query) const {
  if (g.value(x).cols() != dim_) {
    throw ShapeError("project_qkv: input has " + std::to_string(g.value(x).cols()) +
                     " columns, bank expects " + std::to_string(dim_));
  }
  QkvProjection out;
  out.q_d = g.matmul(x, g.param(params, w_q_d()));
  if (with_cohort_query) {
    check_cohort(c, cohorts_);
    out.q_c = g.matmul(x, g.param(params, w_q_c(c.value)));
  }
  out.k = g.matmul(x, g.param(params, w_k()));
  out.v = g.matmul(x, g.param(params, w_v()));
  return out;
}

QueryAttentionNet::QueryAttentionNet(std::string prefix, std::size_t head_dim, std::size_t hidden)
    : prefix_(std::move(prefix)), head_dim_(head_dim), hidden_(hidden) {}

void QueryAttentionNet::init(ParameterSet& params, Rng& rng) const {
  params.add(w1(), uniform_tensor(head_dim_, hidden_, 1.0 / std::sqrt(static_cast<double>(head_dim_)), rng));
  params.add(b1(), Tensor(1, hidden_));
  params.add(w2(), Tensor(hidden_, 1));
  params.add(b2(), Tensor(1, 1));
}

Var QueryAttentionNet::scores(Graph& g, const ParameterSet& params, Var q) const {
  if (g.value(q).cols() != head_dim_) {
    throw ShapeError("query_attention_weights: query has " + std::to_string(g.value(q).cols()) +
                     " columns, QA expects " + std::to_string(head_dim_));
  }
  Var h = g.tanh(g.add_row(g.matmul(q, g.param(params, w1())), g.param(params, b1())));
  return g.add_row(g.matmul(h, g.param(params, w2())), g.param(params, b2()));
}

CohortAwareQuery cohort_aware_query(Graph& g, Var q_d, Var q_c, Var s_d, Var s_c) {
  const Tensor& qd = g.value(q_d);
  const Tensor& qc = g.value(q_c);
  const Tensor& sd = g.value(s_d);
  const Tensor& sc = g.value(s_c);
  if (!qd.same_shape(qc) || !sd.same_shape(sc) || sd.cols() != 1 || sd.rows() != qd.rows()) {
    throw ShapeError("cohort_aware_query: queries " + qd.shape_string() + "/" + qc.shape_string() +
                     ", scores " + sd.shape_string() + "/" + sc.shape_string());
  }
  Var alpha = g.softmax_rows(g.concat_cols({s_d, s_c}));
  CohortAwareQuery out;
  out.alpha_d = g.slice_cols(alpha, 0, 1);
  out.alpha_c = g.slice_cols(alpha, 1, 1);
  out.q_ca = g.add(g.mul_col(q_d, out.alpha_d), g.mul_col(q_c, out.alpha_c));
  return out;
}

Var scaled_dot_product_attention(Graph& g, Var q, Var k, Var v, Var* probs) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(g.value(q).cols()));
  Var p = g.softmax_rows(g.scale(g.matmul_nt(q, k), scale));
  if (probs) *probs = p;
  return g.matmul(p, v);
}

void McaaConfig::validate() const {
  if (heads == 0 || head_dim == 0 || dim == 0) throw ConfigError("mcaa: dimensions must be positive");
  if (heads * head_dim != dim) {
    throw ConfigError("mcaa: heads * head_dim (" + std::to_string(heads * head_dim) +
                      ") must equal dim (" + std::to_string(dim) + ")");
  }
}

MultiheadCohortAttention::MultiheadCohortAttention(std::string prefix, McaaConfig config)
    : prefix_(std::move(prefix)), config_(config) {
  config_.validate();
  const std::size_t hidden = config_.qa_hidden ? config_.qa_hidden : config_.head_dim;
  for (std::size_t h = 0; h < config_.heads; ++h) {
    const std::string hp = prefix_ + ".head." + std::to_string(h);
    banks_.emplace_back(hp, config_.dim, config_.head_dim, config_.cohorts);
    qa_.emplace_back(hp + ".qa", config_.head_dim, hidden);
  }
}

void MultiheadCohortAttention::init(ParameterSet& params, Rng& rng) const {
  for (std::size_t h = 0; h < config_.heads; ++h) {
    banks_[h].init(params, rng);
    if (config_.cohorts > 0) qa_[h].init(params, rng);
  }
  const std::size_t inner = config_.heads * config_.head_dim;
  params.add(w_o(), uniform_tensor(inner, config_.dim, 1.0 / std::sqrt(static_cast<double>(inner)), rng));
  params.add(b_o(), Tensor(1, config_.dim));
}

Var MultiheadCohortAttention::forward(Graph& g, const ParameterSet& params, Var x, CohortId c,
                                      QueryMode mode, McaaTrace* trace) const {
  if (g.value(x).cols() != config_.dim) {
    throw ShapeError("caa_attention: input has " + std::to_string(g.value(x).cols()) +
                     " columns, expected " + std::to_string(config_.dim));
  }
  const bool cohort_aware = mode == QueryMode::CohortAware;
  if (cohort_aware && config_.cohorts == 0) {
    throw ConfigError("caa_attention: cohort-aware mode needs a cohort branch");
  }
  std::vector<Var> heads;
  heads.reserve(config_.heads);
  for (std::size_t h = 0; h < config_.heads; ++h) {
    QkvProjection p = banks_[h].project(g, params, x, c, cohort_aware);
    Var q = p.q_d;
    if (cohort_aware) {
      Var s_d = qa_[h].scores(g, params, p.q_d);
      Var s_c = qa_[h].scores(g, params, p.q_c);
      CohortAwareQuery ca = cohort_aware_query(g, p.q_d, p.q_c, s_d, s_c);
      q = ca.q_ca;
      if (trace) {
        trace->alpha_d.push_back(ca.alpha_d);
        trace->alpha_c.push_back(ca.alpha_c);
      }
    }
    Var probs;
    heads.push_back(scaled_dot_product_attention(g, q, p.k, p.v, &probs));
    if (trace) trace->attention.push_back(probs);
  }
  Var cat = heads.size() == 1 ? heads[0] : g.concat_cols(heads);
  return g.add_row(g.matmul(cat, g.param(params, w_o())), g.param(params, b_o()));
}

}  // namespace mcmil::attention
