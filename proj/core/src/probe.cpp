// SPDX-License-Identifier: Apache-2.0
#include "mcmil/train/probe.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "mcmil/error.hpp"
#include "mcmil/train/metrics.hpp"
#include "mcmil/util/rng.hpp"

namespace mcmil::train {

namespace {

struct Softmax {
  std::size_t d, k;
  std::vector<double> w;  // (d + 1) x k, last row is the bias

  void probs(const double* x, double* p) const {
    double mx = -INFINITY;
    for (std::size_t c = 0; c < k; ++c) {
      double s = w[d * k + c];
      for (std::size_t j = 0; j < d; ++j) s += x[j] * w[j * k + c];
      p[c] = s;
      mx = std::max(mx, s);
    }
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += (p[c] = std::exp(p[c] - mx));
    for (std::size_t c = 0; c < k; ++c) p[c] /= z;
  }
};

double objective(const Softmax& m, const std::vector<double>& X, const std::vector<std::size_t>& y, double l2,
                 std::vector<double>* grad) {
  const std::size_t n = y.size(), d = m.d, k = m.k;
  std::vector<double> p(k);
  double loss = 0.0;
  if (grad) grad->assign(m.w.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = &X[i * d];
    m.probs(x, p.data());
    loss -= std::log(std::max(p[y[i]], 1e-300));
    if (!grad) continue;
    p[y[i]] -= 1.0;
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t c = 0; c < k; ++c) (*grad)[j * k + c] += x[j] * p[c];
    for (std::size_t c = 0; c < k; ++c) (*grad)[d * k + c] += p[c];
  }
  const double inv = 1.0 / static_cast<double>(n);
  loss *= inv;
  for (std::size_t i = 0; i < d * k; ++i) loss += 0.5 * l2 * m.w[i] * m.w[i];
  if (grad) {
    for (double& g : *grad) g *= inv;
    for (std::size_t i = 0; i < d * k; ++i) (*grad)[i] += l2 * m.w[i];
  }
  return loss;
}

}  // namespace

ProbeResult cohort_probe(const diff::Tensor& z, const std::vector<CohortId>& cohorts, std::size_t k,
                         const ProbeConfig& config) {
  if (z.rank() != 2 || z.rows() != cohorts.size()) throw ShapeError("cohort_probe: one representation row per cohort label");
  std::set<std::size_t> present;
  for (CohortId c : cohorts) {
    check_cohort(c, k);
    present.insert(c.value);
  }
  if (present.size() < 2) throw ConfigError("cohort_probe: needs at least two cohorts, got " + std::to_string(present.size()));
  if (!(config.train_fraction > 0.0 && config.train_fraction < 1.0)) {
    throw ConfigError("cohort_probe: train_fraction must lie in (0, 1)");
  }

  // Cohort-stratified split.
  Rng rng(derive_seed(config.seed, 0x50524f4245ULL));
  std::vector<std::size_t> train, test;
  for (std::size_t c : present) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < cohorts.size(); ++i) {
      if (cohorts[i].value == c) idx.push_back(i);
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    auto ntr = static_cast<std::size_t>(std::lround(config.train_fraction * static_cast<double>(idx.size())));
    if (idx.size() >= 2) ntr = std::clamp<std::size_t>(ntr, 1, idx.size() - 1);
    train.insert(train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(ntr));
    test.insert(test.end(), idx.begin() + static_cast<std::ptrdiff_t>(ntr), idx.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  if (test.empty() || train.empty()) throw ConfigError("cohort_probe: too few samples for a held-out split");

  const std::size_t d = z.cols();
  std::vector<double> mean(d, 0.0), sd(d, 0.0);
  for (std::size_t i : train)
    for (std::size_t j = 0; j < d; ++j) mean[j] += z(i, j);
  for (double& m : mean) m /= static_cast<double>(train.size());
  for (std::size_t i : train)
    for (std::size_t j = 0; j < d; ++j) sd[j] += (z(i, j) - mean[j]) * (z(i, j) - mean[j]);
  for (double& s : sd) {
    s = std::sqrt(s / static_cast<double>(train.size()));
    if (!(s > 1e-12)) s = 1.0;
  }
  auto pack = [&](const std::vector<std::size_t>& rows, std::vector<double>& X, std::vector<std::size_t>& y) {
    X.resize(rows.size() * d);
    y.resize(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t j = 0; j < d; ++j) X[r * d + j] = (z(rows[r], j) - mean[j]) / sd[j];
      y[r] = cohorts[rows[r]].value;
    }
  };
  std::vector<double> Xtr, Xte;
  std::vector<std::size_t> ytr, yte;
  pack(train, Xtr, ytr);
  pack(test, Xte, yte);

  Softmax model{d, k, std::vector<double>((d + 1) * k, 0.0)};
  ProbeResult result;
  result.train_size = train.size();
  result.test_size = test.size();
  std::vector<double> grad, trial_w;
  double loss = objective(model, Xtr, ytr, config.l2, &grad);
  double step = 1.0;
  for (std::size_t it = 0; it < config.max_iterations; ++it) {
    double gmax = 0.0, gsq = 0.0;
    for (double g : grad) {
      gmax = std::max(gmax, std::abs(g));
      gsq += g * g;
    }
    if (gmax < config.tolerance) {
      result.converged = true;
      break;
    }
    step = std::min(step * 2.0, 1e3);
    Softmax trial = model;
    double next = loss;
    for (int tries = 0; tries < 60; ++tries) {
      for (std::size_t i = 0; i < model.w.size(); ++i) trial.w[i] = model.w[i] - step * grad[i];
      next = objective(trial, Xtr, ytr, config.l2, nullptr);
      if (next <= loss - 0.5 * step * gsq) break;
      step *= 0.5;
    }
    if (!(next < loss)) {
      result.converged = true;  // no further decrease representable
      break;
    }
    model = std::move(trial);
    loss = objective(model, Xtr, ytr, config.l2, &grad);
    result.iterations = it + 1;
  }

  std::vector<std::vector<double>> probs(yte.size(), std::vector<double>(k));
  for (std::size_t i = 0; i < yte.size(); ++i) model.probs(&Xte[i * d], probs[i].data());
  auto a = macro_ovr_auc(probs, yte, k);
  result.auc = a ? *a : 0.5;
  return result;
}

}  // namespace mcmil::train
