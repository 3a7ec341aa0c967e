// SPDX-License-Identifier: Apache-2.0
#include "mcmil/data/split.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <unordered_map>

#include "mcmil/error.hpp"
#include "mcmil/util/rng.hpp"

namespace mcmil::data {

namespace {

struct Patient {
  std::string key;
  std::pair<std::size_t, std::size_t> stratum;
  std::vector<std::size_t> bags;
};

}  // namespace

std::vector<FoldSplit> stratified_patient_kfold(const Dataset& dataset, std::size_t folds,
                                                std::uint64_t seed, double val_fraction) {
  if (folds < 2) throw ConfigError("kfold: folds must be >= 2");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("kfold: val_fraction must lie in [0, 1)");

  std::vector<Patient> patients;
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t b = 0; b < dataset.bags.size(); ++b) {
    const Bag& bag = dataset.bags[b];
    const std::string key = patient_key(bag);
    auto [it, fresh] = index.emplace(key, patients.size());
    if (fresh) patients.push_back({key, {bag.cohort.value, bag.label}, {}});
    patients[it->second].bags.push_back(b);
  }

  std::map<std::pair<std::size_t, std::size_t>, std::vector<std::size_t>> strata;
  for (std::size_t p = 0; p < patients.size(); ++p) strata[patients[p].stratum].push_back(p);

  Rng rng(derive_seed(seed, 0x4b464f4c44ULL));
  std::vector<std::size_t> fold_of(patients.size());
  std::size_t running = 0;
  for (auto& [stratum, members] : strata) {
    if (members.size() < folds) {
      throw ConfigError("kfold: stratum (cohort " + std::to_string(stratum.first) + ", class " +
                        std::to_string(stratum.second) + ") has " + std::to_string(members.size()) +
                        " patients, fewer than " + std::to_string(folds) + " folds");
    }
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t p : members) fold_of[p] = running++ % folds;
  }

  std::vector<FoldSplit> out(folds);
  for (std::size_t f = 0; f < folds; ++f) {
    // Training patients of this fold, grouped by stratum in shuffled order.
    std::vector<std::vector<std::size_t>> groups;
    for (const auto& [stratum, members] : strata) {
      groups.emplace_back();
      for (std::size_t p : members) {
        if (fold_of[p] != f) groups.back().push_back(p);
      }
    }
    Rng vrng(derive_seed(seed, 0x56414cULL + f));
    std::size_t n_train = 0;
    for (auto& g : groups) {
      std::shuffle(g.begin(), g.end(), vrng);
      n_train += g.size();
    }
    const auto n_val = static_cast<std::size_t>(std::lround(val_fraction * static_cast<double>(n_train)));
    std::vector<std::size_t> quota(groups.size());
    std::vector<double> remainder(groups.size());
    std::size_t assigned = 0;
    for (std::size_t s = 0; s < groups.size(); ++s) {
      const double exact = n_train == 0 ? 0.0
                                        : static_cast<double>(n_val) * static_cast<double>(groups[s].size()) /
                                              static_cast<double>(n_train);
      quota[s] = static_cast<std::size_t>(std::floor(exact));
      remainder[s] = exact - static_cast<double>(quota[s]);
      assigned += quota[s];
    }
    std::vector<std::size_t> order(groups.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
    for (std::size_t i = 0; assigned < n_val && i < order.size(); ++i) {
      if (quota[order[i]] < groups[order[i]].size()) {
        ++quota[order[i]];
        ++assigned;
      }
    }

    std::vector<int> role(patients.size(), 0);  // 0 train, 1 val, 2 test
    for (std::size_t p = 0; p < patients.size(); ++p) {
      if (fold_of[p] == f) role[p] = 2;
    }
    for (std::size_t s = 0; s < groups.size(); ++s) {
      for (std::size_t i = 0; i < quota[s]; ++i) role[groups[s][i]] = 1;
    }

    FoldSplit& split = out[f];
    for (std::size_t p = 0; p < patients.size(); ++p) {
      auto& bags = role[p] == 0 ? split.train : role[p] == 1 ? split.val : split.test;
      auto& keys = role[p] == 0 ? split.train_patients : role[p] == 1 ? split.val_patients : split.test_patients;
      bags.insert(bags.end(), patients[p].bags.begin(), patients[p].bags.end());
      keys.push_back(patients[p].key);
    }
    for (auto* v : {&split.train, &split.val, &split.test}) std::sort(v->begin(), v->end());
  }
  return out;
}

}  // namespace mcmil::data
