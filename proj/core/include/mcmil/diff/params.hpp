// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "mcmil/diff/tensor.hpp"

namespace mcmil::diff {

using NamedTensors = std::map<std::string, Tensor>;

/// Named, ordered collection of trainable tensors. Iteration order is the
/// lexicographic name order, which fixes the order of every reduction and
/// serialization over parameters.
class ParameterSet {
 public:
  using const_iterator = NamedTensors::const_iterator;

  void add(const std::string& name, Tensor value);
  void set(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return values_.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);

  const_iterator begin() const { return values_.begin(); }
  const_iterator end() const { return values_.end(); }
  std::size_t size() const { return values_.size(); }
  std::size_t scalar_count() const;
  std::vector<std::string> names() const;

  /// Insert every tensor of `other`; names must not collide.
  void merge(const ParameterSet& other);
  /// Tensors whose name starts with `prefix`.
  ParameterSet with_prefix(const std::string& prefix) const;

  const NamedTensors& values() const { return values_; }

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
    return a.values_ == b.values_;
  }

 private:
  NamedTensors values_;
};

/// Zero tensor for every parameter.
NamedTensors zeros_like(const ParameterSet& params);

}  // namespace mcmil::diff
