// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mcmil/diff/graph.hpp"
#include "mcmil/types.hpp"
#include "mcmil/util/rng.hpp"

namespace mcmil::attention {

using diff::Graph;
using diff::ParameterSet;
using diff::Var;

/// How a head forms its query.
enum class QueryMode {
  /// Q_ca = a_d * Q_d + a_c * Q_c with per-token QA mixing weights.
  CohortAware,
  /// Q = Q_d only (standard self-attention); QA and cohort queries unused.
  DatasetOnly,
};

struct QkvProjection {
  Var q_d;
  Var q_c;  // invalid when the cohort branch was not requested
  Var k;
  Var v;
};

/// Shared dataset-wide query projection, one query projection per cohort,
/// and the shared key/value projections of one attention head. Only the
/// selected cohort's matrix is ever bound into a graph, so the others get
/// exactly zero gradient.
class CohortQueryBank {
 public:
  CohortQueryBank(std::string prefix, std::size_t dim, std::size_t head_dim, std::size_t cohorts);

  /// Projections ~ U(-1/sqrt(d), 1/sqrt(d)); cohort queries start as copies
  /// of the dataset query plus U(-1e-3, 1e-3) noise.
  void init(ParameterSet& params, Rng& rng) const;

  QkvProjection project(Graph& g, const ParameterSet& params, Var x, CohortId c,
                        bool with_cohort_query = true) const;

  std::string w_q_d() const { return prefix_ + ".w_q_d"; }
  std::string w_q_c(std::size_t c) const { return prefix_ + ".w_q_c." + std::to_string(c); }
  std::string w_k() const { return prefix_ + ".w_k"; }
  std::string w_v() const { return prefix_ + ".w_v"; }

  std::size_t dim() const { return dim_; }
  std::size_t head_dim() const { return head_dim_; }
  std::size_t cohorts() const { return cohorts_; }

 private:
  std::string prefix_;
  std::size_t dim_;
  std::size_t head_dim_;
  std::size_t cohorts_;
};

/// Query-Attention: tanh hidden layer (d_k -> hidden) and a scalar output,
/// applied independently to every token's query. The output layer starts at
/// zero so both queries are weighted equally at initialization.
class QueryAttentionNet {
 public:
  QueryAttentionNet(std::string prefix, std::size_t head_dim, std::size_t hidden);

  void init(ParameterSet& params, Rng& rng) const;

  /// Raw (pre-normalization) score per token: n x d_k -> n x 1.
  Var scores(Graph& g, const ParameterSet& params, Var q) const;

  std::string w1() const { return prefix_ + ".w1"; }
  std::string b1() const { return prefix_ + ".b1"; }
  std::string w2() const { return prefix_ + ".w2"; }
  std::string b2() const { return prefix_ + ".b2"; }

 private:
  std::string prefix_;
  std::size_t head_dim_;
  std::size_t hidden_;
};

struct CohortAwareQuery {
  Var q_ca;
  Var alpha_d;
  Var alpha_c;
};

/// Per-token two-way softmax over (s_d, s_c) and the convex combination of
/// the two queries.
CohortAwareQuery cohort_aware_query(Graph& g, Var q_d, Var q_c, Var s_d, Var s_c);

/// softmax(q k^T / sqrt(d_k)) v. If `probs` is non-null it receives the
/// attention-probability node.
Var scaled_dot_product_attention(Graph& g, Var q, Var k, Var v, Var* probs = nullptr);

struct McaaConfig {
  std::size_t dim = 32;
  std::size_t heads = 4;
  std::size_t head_dim = 8;
  /// 0 builds a plain multihead self-attention with no cohort branch.
  std::size_t cohorts = 2;
  /// QA hidden width; 0 means head_dim.
  std::size_t qa_hidden = 0;

  void validate() const;
};

/// Internals captured during one forward, for inspection in tests.
struct McaaTrace {
  std::vector<Var> alpha_d;
  std::vector<Var> alpha_c;
  std::vector<Var> attention;
};

/// Multihead Cohort-Aware Attention: H heads, each with its own query bank
/// and QA net, concatenated and projected back to d.
class MultiheadCohortAttention {
 public:
  MultiheadCohortAttention(std::string prefix, McaaConfig config);

  void init(ParameterSet& params, Rng& rng) const;

  /// x: n x d -> n x d.
  Var forward(Graph& g, const ParameterSet& params, Var x, CohortId c, QueryMode mode,
              McaaTrace* trace = nullptr) const;

  const McaaConfig& config() const { return config_; }
  const CohortQueryBank& bank(std::size_t head) const { return banks_.at(head); }
  const QueryAttentionNet& qa(std::size_t head) const { return qa_.at(head); }
  std::string w_o() const { return prefix_ + ".w_o"; }
  std::string b_o() const { return prefix_ + ".b_o"; }

 private:
  std::string prefix_;
  McaaConfig config_;
  std::vector<CohortQueryBank> banks_;
  std::vector<QueryAttentionNet> qa_;
};

}  // namespace mcmil::attention
