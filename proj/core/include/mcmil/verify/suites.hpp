// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mcmil/diff/graph.hpp"
#include "mcmil/util/rng.hpp"

namespace mcmil::verify {

/// A differentiable computation at a random point. Every entry of `point`
/// is bound with Graph::param, so its gradient can be read back by name.
struct GradientCase {
  std::string name;
  diff::ParameterSet point;
  std::function<diff::Var(diff::Graph&, const diff::ParameterSet&)> build;
};

/// One random instance of every differentiable operation in the library:
/// tape primitives, cohort-aware attention, the encoder, MIL aggregators and
/// heads, and the MI score network and estimators. Inputs avoid the kinks
/// of relu, max and clip by more than 1e-2.
std::vector<GradientCase> gradient_cases(Rng& rng);

/// Reverse-mode gradient of sum(R * y) for every entry of `point`.
diff::NamedTensors analytic_gradient(const GradientCase& c, const diff::Tensor& projection,
                                     diff::GraphOptions options = {});
/// Forward value sum(R * y).
double projected_value(const GradientCase& c, const diff::ParameterSet& point, const diff::Tensor& projection);
/// Shape of the case's output.
diff::Tensor output_at(const GradientCase& c);

struct GaussianMiConfig {
  double rho = 0.8;
  std::size_t samples = 10000;
  std::size_t hidden = 64;
  double tau = 5.0;
  std::size_t batch = 64;
  std::size_t steps = 1500;
  double lr = 2e-3;
  /// Independent evaluation draws for the variance comparison.
  std::size_t variance_seeds = 20;
  std::size_t eval_batch = 256;
  std::uint64_t seed = 0;
};

struct GaussianMiResult {
  /// SMILE estimate of the trained network on the training sample.
  double estimate = 0.0;
  double smile_variance = 0.0;
  double mine_variance = 0.0;
};

/// Trains a score network with SMILE on correlated standard Gaussians and
/// compares SMILE and MINE estimates of the trained network across fresh
/// samples.
GaussianMiResult gaussian_mi_experiment(const GaussianMiConfig& config);

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct SuiteReport {
  std::string name;
  std::vector<Check> checks;
  double seconds = 0.0;
  bool passed() const;
};

struct VerifyOptions {
  std::uint64_t seed = 0;
  /// Mutation: negate the pass-through gradient of clip().
  bool flip_clip_gradient = false;
  std::size_t gradient_instances = 10;
};

/// Suite names in run order.
std::vector<std::string> suite_names();
SuiteReport run_suite(const std::string& name, const VerifyOptions& options);
std::vector<SuiteReport> run_all(const VerifyOptions& options);
/// One line per suite, then one per failed check.
std::string format_report(const std::vector<SuiteReport>& reports);

}  // namespace mcmil::verify
