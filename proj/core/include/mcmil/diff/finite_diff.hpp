// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>

#include "mcmil/diff/tensor.hpp"

namespace mcmil::diff {

/// Central-difference gradient of a scalar function: (f(x+e) - f(x-e)) / 2e
/// per coordinate. Throws NumericError if a probe value is not finite.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps);

/// ||a - b|| / max(||a||, ||b||, floor); 0 when both are (near) zero.
double relative_error(const Tensor& analytic, const Tensor& numeric, double floor = 1e-8);

}  // namespace mcmil::diff
