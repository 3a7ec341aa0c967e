// SPDX-License-Identifier: Apache-2.0
#include "mcmil/diff/finite_diff.hpp"

#include <algorithm>
#include <cmath>

#include "mcmil/error.hpp"

namespace mcmil::diff {

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps) {
  if (!(eps > 0.0)) throw ConfigError("finite_diff_grad: eps must be positive");
  Tensor g(x.shape(), std::vector<double>(x.size(), 0.0));
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = f(probe);
    probe[i] = orig - eps;
    const double down = f(probe);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_diff_grad: non-finite value probing coordinate " + std::to_string(i));
    }
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

double relative_error(const Tensor& analytic, const Tensor& numeric, double floor) {
  if (!analytic.same_shape(numeric)) throw ShapeError("relative_error: shape mismatch");
  double diff = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double d = analytic[i] - numeric[i];
    diff += d * d;
  }
  const double scale = std::max({l2_norm(analytic), l2_norm(numeric), floor});
  return std::sqrt(diff) / scale;
}

}  // namespace mcmil::diff
