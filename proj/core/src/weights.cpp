// SPDX-License-Identifier: Apache-2.0
#include "mcmil/balance/weights.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "mcmil/error.hpp"

namespace mcmil::balance {

std::vector<double> pretrain_slide_tile_weights(const std::vector<HierarchyRecord>& records) {
  if (records.empty()) throw ConfigError("pretrain_weights: empty hierarchy");
  std::map<std::size_t, std::size_t> slides_in;
  for (const auto& r : records) {
    if (r.tiles == 0) throw ConfigError("pretrain_weights: slide '" + r.slide_id + "' has no tiles");
    ++slides_in[r.cohort.value];
  }
  const double cohorts = static_cast<double>(slides_in.size());
  std::vector<double> w;
  w.reserve(records.size());
  for (const auto& r : records) {
    w.push_back(1.0 / cohorts / static_cast<double>(slides_in[r.cohort.value]) / static_cast<double>(r.tiles));
  }
  return w;
}

std::vector<double> pretrain_weights(const std::vector<HierarchyRecord>& records) {
  const auto per_slide = pretrain_slide_tile_weights(records);
  std::vector<double> w;
  for (std::size_t i = 0; i < records.size(); ++i) w.insert(w.end(), records[i].tiles, per_slide[i]);
  return w;
}

std::vector<double> mil_weights(const std::vector<HierarchyRecord>& records) {
  if (records.empty()) throw ConfigError("mil_weights: empty input");
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> combo;
  for (const auto& r : records) ++combo[{r.cohort.value, r.label}];
  const double combos = static_cast<double>(combo.size());
  std::vector<double> w;
  w.reserve(records.size());
  for (const auto& r : records) {
    w.push_back(1.0 / combos / static_cast<double>(combo[{r.cohort.value, r.label}]));
  }
  return w;
}

std::vector<double> clip_weights(const std::vector<double>& weights) {
  if (weights.size() < 2) throw ConfigError("clip_weights: need at least two weights");
  const double n = static_cast<double>(weights.size());
  double mean = 0.0;
  for (double w : weights) mean += w;
  mean /= n;
  double var = 0.0;
  for (double w : weights) var += (w - mean) * (w - mean);
  const double sd = std::sqrt(var / n);
  const double lo = std::max(mean - 2.0 * sd, 0.0), hi = mean + 2.0 * sd;
  std::vector<double> out(weights);
  for (double& w : out) {
    if (w > hi) w = hi;
    if (w < lo) w = lo;
  }
  return out;
}

std::vector<double> batch_renormalize(const std::vector<double>& weights) {
  if (weights.empty()) throw NumericError("batch_renormalize: empty batch");
  double sum = 0.0;
  for (double w : weights) sum += w;
  if (!(sum > 0.0)) throw NumericError("batch_renormalize: all weights are zero");
  const double scale = static_cast<double>(weights.size()) / sum;
  std::vector<double> out(weights);
  for (double& w : out) w *= scale;
  return out;
}

void write_weight_table(std::ostream& out, const std::vector<std::string>& ids, const std::vector<double>& raw,
                        const std::vector<double>& clipped) {
  if (ids.size() != raw.size() || raw.size() != clipped.size()) {
    throw ConfigError("write_weight_table: column lengths differ");
  }
  out << "sample_id\traw_weight\tclipped_weight\n";
  char buf[64];
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out << ids[i];
    std::snprintf(buf, sizeof buf, "\t%.17g\t%.17g\n", raw[i], clipped[i]);
    out << buf;
  }
}

}  // namespace mcmil::balance
