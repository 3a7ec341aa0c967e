// SPDX-License-Identifier: Apache-2.0
#include "mcmil/train/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_map>

#include "mcmil/error.hpp"

namespace mcmil::train {

std::optional<double> auc(const std::vector<double>& scores, const std::vector<int>& positive) {
  if (scores.size() != positive.size()) throw ShapeError("auc: scores and labels differ in length");
  // Rank-sum form of the pair count: sort once, give tied groups their
  // average rank.
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos = 0.0, neg = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (positive[order[k]]) rank_sum += avg_rank;
    }
    i = j;
  }
  for (int p : positive) (p ? pos : neg) += 1.0;
  if (pos == 0.0 || neg == 0.0) return std::nullopt;
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

std::optional<double> macro_ovr_auc(const std::vector<std::vector<double>>& probabilities,
                                    const std::vector<std::size_t>& labels, std::size_t classes) {
  if (probabilities.size() != labels.size()) throw ShapeError("macro_ovr_auc: length mismatch");
  double sum = 0.0;
  std::size_t defined = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<double> s(labels.size());
    std::vector<int> p(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      s[i] = probabilities[i].at(c);
      p[i] = labels[i] == c ? 1 : 0;
    }
    if (auto a = auc(s, p)) {
      sum += *a;
      ++defined;
    }
    if (classes == 2) break;  // both one-vs-rest curves coincide
  }
  if (defined == 0) return std::nullopt;
  return sum / static_cast<double>(defined);
}

std::optional<double> balanced_accuracy(const std::vector<std::size_t>& predicted,
                                        const std::vector<std::size_t>& labels, std::size_t classes) {
  if (predicted.size() != labels.size()) throw ShapeError("balanced_accuracy: length mismatch");
  std::vector<double> hit(classes, 0.0), count(classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    count.at(labels[i]) += 1.0;
    if (predicted[i] == labels[i]) hit[labels[i]] += 1.0;
  }
  double sum = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    if (count[c] == 0.0) return std::nullopt;
    sum += hit[c] / count[c];
  }
  return sum / static_cast<double>(classes);
}

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::vector<SlidePrediction> patient_level(const std::vector<SlidePrediction>& slides) {
  std::vector<SlidePrediction> out;
  std::vector<std::size_t> counts;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& s : slides) {
    auto [it, fresh] = index.emplace(s.patient_key, out.size());
    if (fresh) {
      out.push_back(s);
      counts.push_back(1);
      continue;
    }
    auto& p = out[it->second];
    for (std::size_t c = 0; c < p.probabilities.size(); ++c) p.probabilities[c] += s.probabilities.at(c);
    ++counts[it->second];
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (double& v : out[i].probabilities) v /= static_cast<double>(counts[i]);
  }
  return out;
}

namespace {

void score(const std::vector<SlidePrediction>& patients, std::size_t classes, std::optional<double>& auc_out,
           std::optional<double>& bacc_out) {
  std::vector<std::vector<double>> probs;
  std::vector<std::size_t> labels, predicted;
  for (const auto& p : patients) {
    probs.push_back(p.probabilities);
    labels.push_back(p.label);
    predicted.push_back(argmax(p.probabilities));
  }
  auc_out = macro_ovr_auc(probs, labels, classes);
  bacc_out = balanced_accuracy(predicted, labels, classes);
}

}  // namespace

MetricsReport compute_metrics(const std::vector<SlidePrediction>& slides, std::size_t classes, std::size_t cohorts) {
  if (slides.empty()) throw ConfigError("evaluate: no slides");
  const auto patients = patient_level(slides);
  MetricsReport r;
  r.patients = patients.size();
  score(patients, classes, r.auc, r.balanced_accuracy);
  for (std::size_t c = 0; c < cohorts; ++c) {
    std::vector<SlidePrediction> sub;
    for (const auto& p : patients) {
      if (p.cohort.value == c) sub.push_back(p);
    }
    if (sub.empty()) continue;
    score(sub, classes, r.cohort_auc[c], r.cohort_balanced_accuracy[c]);
  }
  return r;
}

}  // namespace mcmil::train
