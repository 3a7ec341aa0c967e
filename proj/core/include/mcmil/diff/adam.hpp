// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "mcmil/diff/params.hpp"

namespace mcmil::diff {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moment buffers are keyed by parameter name.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// Descend along `grads`. A zero learning rate leaves `params` bitwise intact.
  void step(ParameterSet& params, const NamedTensors& grads);

  const AdamConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }
  std::uint64_t steps() const { return t_; }

 private:
  AdamConfig config_;
  NamedTensors m_;
  NamedTensors v_;
  std::uint64_t t_ = 0;
};

}  // namespace mcmil::diff
