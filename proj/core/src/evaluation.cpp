// SPDX-License-Identifier: Apache-2.0
#include "mcmil/diff/evaluation.hpp"

#include "mcmil/error.hpp"

namespace mcmil::diff {

Evaluation::Evaluation(const GraphBuilder& builder, const NamedTensors& inputs, GraphOptions options)
    : graph_(options) {
  std::map<std::string, Var> leaves;
  for (const auto& [name, t] : inputs) leaves.emplace(name, graph_.input(name, t));
  outputs_ = builder(graph_, leaves);
}

Var Evaluation::find(const std::string& name) const {
  auto it = outputs_.find(name);
  if (it == outputs_.end()) throw ConfigError("evaluation: unknown output '" + name + "'");
  return it->second;
}

NamedTensors Evaluation::outputs() const {
  NamedTensors out;
  for (const auto& [name, v] : outputs_) out.emplace(name, graph_.value(v));
  return out;
}

const Tensor& Evaluation::output(const std::string& name) const { return graph_.value(find(name)); }

NamedTensors Evaluation::backward(const std::string& output, const Tensor& seed) {
  graph_.backward(find(output), seed);
  return graph_.leaf_gradients();
}

NamedTensors evaluate(const GraphBuilder& builder, const NamedTensors& inputs) {
  return Evaluation(builder, inputs).outputs();
}

}  // namespace mcmil::diff
