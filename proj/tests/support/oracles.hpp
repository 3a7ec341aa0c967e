// SPDX-License-Identifier: Apache-2.0
// Reference computations written independently of the library, used as
// test oracles.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "mcmil/diff/tensor.hpp"

namespace oracle {

inline mcmil::diff::Tensor naive_matmul(const mcmil::diff::Tensor& a, const mcmil::diff::Tensor& b) {
  mcmil::diff::Tensor c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      long double s = 0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += static_cast<long double>(a(i, k)) * b(k, j);
      c(i, j) = static_cast<double>(s);
    }
  return c;
}

/// Central differences of f at x, one coordinate at a time.
inline std::vector<double> central_difference(const std::function<double(const std::vector<double>&)>& f,
                                              std::vector<double> x, double eps) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + eps;
    const double up = f(x);
    x[i] = keep - eps;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||); 0 when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double den = std::sqrt(std::max(na, nb));
  return den < 1e-12 ? std::sqrt(d) : std::sqrt(d) / den;
}

/// Concordant pairs plus half the tied pairs, over all positive/negative pairs.
inline std::optional<double> pair_count_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double hit = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1;
        hit += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
  if (pairs == 0) return std::nullopt;
  return hit / pairs;
}

/// Area under the ROC polyline swept over distinct thresholds, trapezoid rule.
inline std::optional<double> trapezoid_auc(const std::vector<double>& s, const std::vector<int>& y) {
  const double P = static_cast<double>(std::count(y.begin(), y.end(), 1));
  const double N = static_cast<double>(y.size()) - P;
  if (P == 0 || N == 0) return std::nullopt;
  std::vector<double> th(s);
  std::sort(th.rbegin(), th.rend());
  th.erase(std::unique(th.begin(), th.end()), th.end());
  double area = 0, tp_prev = 0, fp_prev = 0;
  for (double t : th) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s[i] >= t) (y[i] == 1 ? tp : fp) += 1;
    area += (fp - fp_prev) * (tp + tp_prev) / 2.0;
    tp_prev = tp;
    fp_prev = fp;
  }
  return area / (P * N);
}

/// Mean and population standard deviation.
inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(v.size()))};
}

}  // namespace oracle
