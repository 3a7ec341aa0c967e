// SPDX-License-Identifier: Apache-2.0
#include "mcmil/diff/adam.hpp"

#include <cmath>

#include "mcmil/error.hpp"

namespace mcmil::diff {

void Adam::step(ParameterSet& params, const NamedTensors& grads) {
  if (config_.lr == 0.0) return;
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (const auto& [name, g] : grads) {
    Tensor& p = params.at(name);
    if (!p.same_shape(g)) throw ShapeError("adam: gradient shape mismatch for '" + name + "'");
    auto [mit, m_new] = m_.try_emplace(name, Tensor(g.shape(), std::vector<double>(g.size(), 0.0)));
    auto [vit, v_new] = v_.try_emplace(name, Tensor(g.shape(), std::vector<double>(g.size(), 0.0)));
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

}  // namespace mcmil::diff
