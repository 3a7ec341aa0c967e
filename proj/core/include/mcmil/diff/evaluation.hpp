// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <string>

#include "mcmil/diff/graph.hpp"

namespace mcmil::diff {

/// Builds a computation from named input leaves and returns its named outputs.
using GraphBuilder =
    std::function<std::map<std::string, Var>(Graph&, const std::map<std::string, Var>& inputs)>;

/// One forward binding of a GraphBuilder. Owns the tape so gradients can be
/// requested for any of the named outputs afterwards.
class Evaluation {
 public:
  Evaluation(const GraphBuilder& builder, const NamedTensors& inputs, GraphOptions options = {});

  /// Forward values for every named output.
  NamedTensors outputs() const;
  const Tensor& output(const std::string& name) const;

  /// Gradient of `output` (seeded with `seed`) for every named input.
  /// Inputs with no path to the output get an exact zero tensor.
  NamedTensors backward(const std::string& output, const Tensor& seed);

  Graph& graph() { return graph_; }

 private:
  Var find(const std::string& name) const;

  Graph graph_;
  std::map<std::string, Var> outputs_;
};

/// Convenience wrapper: forward values of `builder` at `inputs`.
NamedTensors evaluate(const GraphBuilder& builder, const NamedTensors& inputs);

}  // namespace mcmil::diff
