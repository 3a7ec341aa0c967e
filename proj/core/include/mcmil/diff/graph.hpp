// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "mcmil/diff/params.hpp"
#include "mcmil/diff/tensor.hpp"

namespace mcmil::diff {

/// Handle to a node of a Graph. Only meaningful for the graph that issued it.
struct Var {
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::size_t id = kNone;
  bool valid() const noexcept { return id != kNone; }
};

struct GraphOptions {
  /// Raise NumericError as soon as an op produces NaN/Inf.
  bool check_finite = true;
  /// Mutation hook for the verification suite: negates the pass-through
  /// gradient of clip(). Never set outside of mutation testing.
  bool flip_clip_gradient = false;
};

/// Define-by-run reverse-mode tape over rank-2 tensors.
///
/// Every op evaluates eagerly and appends a node; node ids are therefore a
/// topological order. backward() walks the tape once in reverse. Leaves are
/// either named (inputs and parameters, which receive gradients) or
/// constants. A Graph is confined to one thread.
class Graph {
 public:
  explicit Graph(GraphOptions options = {});
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) noexcept = default;
  Graph& operator=(Graph&&) noexcept = default;

  // Leaves.
  Var input(const std::string& name, Tensor value);
  Var constant(Tensor value);
  /// Differentiable leaf for `params.at(name)`; repeated calls return the same node.
  Var param(const ParameterSet& params, const std::string& name);
  /// Non-differentiable copy of `params.at(name)`.
  Var frozen(const ParameterSet& params, const std::string& name);

  const Tensor& value(Var v) const;
  const std::string& op_name(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }
  bool requires_grad(Var v) const;

  // Linear algebra.
  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);  // a * b^T
  Var transpose(Var a);

  // Elementwise binary (equal shapes) and broadcasts.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var add_row(Var a, Var row);  // a (r x c) + row (1 x c)
  Var mul_col(Var a, Var col);  // a (r x c) * col (r x 1), column broadcast
  Var scale(Var a, double s);
  Var add_scalar(Var a, double s);

  // Elementwise unary.
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var softplus(Var a);  // log(1 + e^x)
  Var relu(Var a);
  Var gelu(Var a);  // exact erf form
  Var exp(Var a);
  Var log(Var a);
  /// max(min(a, hi), lo); gradient 1 on [lo, hi], exactly 0 outside.
  Var clip(Var a, double lo, double hi);

  // Row-wise normalizations.
  Var softmax_rows(Var a);
  Var log_softmax_rows(Var a);
  Var layer_norm_rows(Var x, Var gamma, Var beta, double eps = 1e-5);

  // Reductions.
  Var sum_all(Var a);   // 1 x 1
  Var mean_all(Var a);  // 1 x 1
  Var sum_rows(Var a);  // 1 x c, column sums
  Var mean_rows(Var a); // 1 x c, column means
  Var max_rows(Var a);  // 1 x c, column max; ties go to the lowest row
  Var sum_cols(Var a);  // r x 1, row sums

  // Structural.
  Var concat_cols(const std::vector<Var>& parts);
  Var concat_rows(const std::vector<Var>& parts);
  Var slice_rows(Var a, std::size_t begin, std::size_t count);
  Var slice_cols(Var a, std::size_t begin, std::size_t count);
  /// out[i] = a(i, index[i]); r x 1.
  Var gather_cols(Var a, const std::vector<std::size_t>& index);
  /// (B1*B2) x h with row i*B2 + j = a[i] + b[j].
  Var pairwise_sum(Var a, Var b);
  Var reshape(Var a, std::size_t rows, std::size_t cols);

  /// Reverse pass from `output` seeded with `seed` (same shape as output).
  void backward(Var output, const Tensor& seed);
  /// Reverse pass from a 1 x 1 output with seed 1.
  void backward(Var output);

  /// Gradient accumulated at `v` by the last backward(); an exact zero
  /// tensor when no path connects v to the output.
  Tensor grad(Var v) const;
  /// Gradients of every named leaf (inputs and parameters).
  NamedTensors leaf_gradients() const;
  /// Gradient for every tensor in `params`; zero for those absent from the graph.
  NamedTensors param_gradients(const ParameterSet& params) const;

 private:
  using BackwardFn = std::function<void(Graph&, const Tensor& gout)>;

  struct Node {
    std::string op;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  Var push(std::string op, Tensor value, std::vector<std::size_t> inputs, BackwardFn fn);
  Var leaf(const std::string& name, Tensor value);
  const Node& node(Var v) const;
  [[noreturn]] void shape_error(const std::string& op, const std::string& detail) const;
  Tensor& grad_buffer(std::size_t id);
  bool needs(std::size_t id) const { return nodes_[id].requires_grad; }
  template <typename F, typename D>
  Var unary(const char* op, Var a, F f, D dfdx);

  GraphOptions options_;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> named_leaves_;
};

}  // namespace mcmil::diff
