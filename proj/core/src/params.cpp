// SPDX-License-Identifier: Apache-2.0
#include "mcmil/diff/params.hpp"

#include "mcmil/error.hpp"

namespace mcmil::diff {

void ParameterSet::add(const std::string& name, Tensor value) {
  if (!values_.emplace(name, std::move(value)).second) {
    throw ConfigError("parameter '" + name + "' already defined");
  }
}

void ParameterSet::set(const std::string& name, Tensor value) {
  auto it = values_.find(name);
  if (it == values_.end()) throw ConfigError("unknown parameter '" + name + "'");
  if (!it->second.same_shape(value)) {
    throw ShapeError("parameter '" + name + "': shape " + it->second.shape_string() +
                     " cannot take " + value.shape_string());
  }
  it->second = std::move(value);
}

const Tensor& ParameterSet::at(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

Tensor& ParameterSet::at(const std::string& name) {
  auto it = values_.find(name);
  if (it == values_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : values_) n += t.size();
  return n;
}

std::vector<std::string> ParameterSet::names() const {
  std::vector<std::string> out;
  out.reserve(values_.size());
  for (const auto& [name, _] : values_) out.push_back(name);
  return out;
}

void ParameterSet::merge(const ParameterSet& other) {
  for (const auto& [name, t] : other.values_) add(name, t);
}

ParameterSet ParameterSet::with_prefix(const std::string& prefix) const {
  ParameterSet out;
  for (const auto& [name, t] : values_) {
    if (name.compare(0, prefix.size(), prefix) == 0) out.values_.emplace(name, t);
  }
  return out;
}

NamedTensors zeros_like(const ParameterSet& params) {
  NamedTensors out;
  for (const auto& [name, t] : params) out.emplace(name, Tensor(t.shape(), std::vector<double>(t.size(), 0.0)));
  return out;
}

}  // namespace mcmil::diff
