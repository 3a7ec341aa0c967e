// SPDX-License-Identifier: Apache-2.0
// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "experiments.hpp"
#include "mcmil/attention/cohort_attention.hpp"
#include "mcmil/balance/weights.hpp"
#include "mcmil/data/split.hpp"
#include "mcmil/data/synth.hpp"
#include "mcmil/encoder/cavit.hpp"
#include "mcmil/mi/adversary.hpp"
#include "mcmil/train/metrics.hpp"
#include "mcmil/train/trainer.hpp"
#include "mcmil/util/log.hpp"
#include "mcmil/verify/suites.hpp"
#include "oracles.hpp"

using namespace mcmil;
using diff::Tensor;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Line {
  int id;
  bool pass;
  std::string what;
  std::string measured;
};

std::vector<Line> results;

void report(int id, bool pass, const std::string& what, const std::string& measured) {
  results.push_back({id, pass, what, measured});
  std::printf("%s criterion %d: %s | %s\n", pass ? "PASS" : "FAIL", id, what.c_str(), measured.c_str());
  std::fflush(stdout);
}

bool all_zero(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](double v) { return v == 0.0; });
}

encoder::CaVitConfig desk_encoder(std::size_t cohorts) {
  encoder::CaVitConfig c;
  c.channels = 1;
  c.side = 8;
  c.patch_size = 4;
  c.dim = 16;
  c.depth = 2;
  c.heads = 2;
  c.head_dim = 8;
  c.cohorts = cohorts;
  return c;
}

encoder::TileImage tile(const encoder::CaVitConfig& c, std::size_t cohort, Rng& rng) {
  Tensor px({c.channels, c.side, c.side}, std::vector<double>(c.channels * c.side * c.side));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double& v : px.data()) v = u(rng);
  return {px, CohortId{cohort}};
}

// 1. Reverse mode against central differences on every differentiable case.
void gradients() {
  constexpr double kEps = 1e-3, kTol = 1e-4;
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_name;
  std::size_t cases = 0;
  for (std::uint64_t inst = 0; inst < 10; ++inst) {
    Rng rng(derive_seed(2024, inst));
    for (const auto& c : verify::gradient_cases(rng)) {
      const Tensor y = verify::output_at(c);
      const Tensor proj = uniform_tensor(y.rows(), y.cols(), 1.0, rng);
      const auto analytic = verify::analytic_gradient(c, proj);
      std::vector<double> a, n;
      for (const auto& name : c.point.names()) {
        const Tensor& x0 = c.point.at(name);
        auto f = [&](const std::vector<double>& v) {
          diff::ParameterSet p = c.point;
          p.set(name, Tensor(x0.shape(), v));
          return verify::projected_value(c, p, proj);
        };
        const auto num = oracle::central_difference(f, x0.storage(), kEps);
        n.insert(n.end(), num.begin(), num.end());
        a.insert(a.end(), analytic.at(name).data().begin(), analytic.at(name).data().end());
      }
      const double e = oracle::relative_error(a, n);
      if (e > worst) {
        worst = e;
        worst_name = c.name;
      }
      ++cases;
    }
  }
  const double secs = since(t0);
  report(1, worst < kTol && secs < 120.0, "gradients match central differences (eps 1e-3, 10 instances)",
         std::to_string(cases) + " case instances, worst rel err " + fmt("%.2e", worst) + " (" + worst_name +
             ") < 1e-4, " + fmt("%.1f", secs) + "s < 120s");
}

// 2. A cohort-0 batch leaves every other cohort query with exactly zero gradient.
void routing() {
  const auto ec = desk_encoder(3);
  encoder::CaVitEncoder enc(ec);
  std::size_t zero = 0, nonzero_others = 0, own_live = 0, own_total = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(derive_seed(77, seed));
    diff::ParameterSet p;
    enc.init(p, rng);
    diff::Graph g;
    std::vector<diff::Var> outs;
    for (int i = 0; i < 6; ++i) outs.push_back(enc.encode(g, p, tile(ec, 0, rng), attention::QueryMode::CohortAware));
    g.backward(g.concat_rows(outs), uniform_tensor(outs.size(), ec.dim, 1.0, rng));
    const auto grads = g.param_gradients(p);
    for (std::size_t l = 0; l < ec.depth; ++l)
      for (std::size_t h = 0; h < ec.heads; ++h) {
        const auto& bank = enc.attention(l).bank(h);
        ++own_total;
        own_live += all_zero(grads.at(bank.w_q_c(0))) ? 0 : 1;
        for (std::size_t c = 1; c < ec.cohorts; ++c) (all_zero(grads.at(bank.w_q_c(c))) ? zero : nonzero_others)++;
      }
  }
  report(2, nonzero_others == 0 && own_live == own_total, "cohort-0 batch routes no gradient to other cohort queries",
         std::to_string(zero) + " other-cohort matrices exactly zero, " + std::to_string(nonzero_others) +
             " nonzero; cohort-0 matrices live " + std::to_string(own_live) + "/" + std::to_string(own_total));
}

// 3. Copied cohort queries reduce the encoder to the plain ViT bitwise, and a
// saturated mixing weight returns the shared query bitwise.
void reduction() {
  const auto ec = desk_encoder(3);
  encoder::CaVitEncoder enc(ec);
  std::size_t equal = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(derive_seed(78, seed));
    diff::ParameterSet p;
    enc.init(p, rng);
    for (std::size_t l = 0; l < ec.depth; ++l)
      for (std::size_t h = 0; h < ec.heads; ++h) {
        const auto& att = enc.attention(l);
        p.set(att.qa(h).w2(), uniform_tensor(ec.head_dim, 1, 2.0, rng));
        for (std::size_t c = 0; c < ec.cohorts; ++c) p.set(att.bank(h).w_q_c(c), p.at(att.bank(h).w_q_d()));
      }
    for (std::size_t c = 0; c < ec.cohorts; ++c) {
      const auto t = tile(ec, c, rng);
      equal += enc.encode_tile(p, t, attention::QueryMode::CohortAware) ==
               enc.encode_tile(p, t, attention::QueryMode::DatasetOnly);
      ++total;
    }
  }
  Rng rng(79);
  diff::Graph g;
  const Tensor qd = uniform_tensor(9, 8, 1.0, rng);
  auto q = attention::cohort_aware_query(g, g.constant(qd), g.constant(uniform_tensor(9, 8, 1.0, rng)),
                                         g.constant(Tensor(9, 1, 800.0)), g.constant(uniform_tensor(9, 1, 1.0, rng)));
  const bool saturated = g.value(q.alpha_d) == Tensor(9, 1, 1.0) && g.value(q.q_ca) == qd;
  report(3, equal == total && saturated, "cohort-aware encoder reduces to plain ViT bitwise",
         std::to_string(equal) + "/" + std::to_string(total) + " tiles bitwise equal; saturated alpha_d=1 gives q_d " +
             (saturated ? "bitwise" : "NOT bitwise"));
}

// 4. Trained estimator against the analytic Gaussian mutual information.
void gaussian_mi() {
  const auto t0 = Clock::now();
  verify::GaussianMiConfig cfg;
  cfg.seed = 11;
  const auto r = verify::gaussian_mi_experiment(cfg);
  const double truth = -0.5 * std::log(1.0 - cfg.rho * cfg.rho);
  const double secs = since(t0);
  const bool pass = std::abs(r.estimate - truth) <= 0.1 && r.smile_variance <= r.mine_variance && secs < 300.0;
  report(4, pass, "SMILE on rho=0.8 Gaussians within 0.1 nats, variance <= MINE",
         "estimate " + fmt("%.4f", r.estimate) + " vs " + fmt("%.4f", truth) + " (|err| " +
             fmt("%.4f", std::abs(r.estimate - truth)) + " <= 0.1); var smile " + fmt("%.3e", r.smile_variance) +
             " <= mine " + fmt("%.3e", r.mine_variance) + "; " + fmt("%.1f", secs) + "s < 300s");
}

// 5. Estimator identities.
void identities() {
  Rng rng(5);
  mi::ScoreNetwork net({6, 3, 16});
  diff::ParameterSet zero;
  net.init(zero, rng);
  for (const auto& n : zero.names()) zero.set(n, Tensor(zero.at(n).rows(), zero.at(n).cols()));
  bool zero_ok = true;
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    std::vector<CohortId> ids;
    const std::size_t b = 2 + t;
    for (std::size_t i = 0; i < b; ++i) ids.push_back(CohortId{(i * 7 + t) % 3});
    const Tensor z = uniform_tensor(b, 6, 2.0, rng), c = mi::one_hot(ids, 3);
    zero_ok = zero_ok && mi::smile_estimate(net, zero, z, c, 5.0) == 0.0 && mi::mine_estimate(net, zero, z, c) == 0.0;
    diff::ParameterSet p;
    net.init(p, rng);
    worst = std::max(worst, std::abs(mi::smile_estimate(net, p, z, c, mi::kNoClip) - mi::mine_estimate(net, p, z, c)));
  }
  report(5, zero_ok && worst <= 1e-12, "T=0 gives exactly 0; unclipped SMILE equals MINE",
         std::string("zero network ") + (zero_ok ? "exactly 0" : "NOT 0") + "; max |SMILE(inf)-MINE| " +
             fmt("%.2e", worst) + " <= 1e-12");
}

// 6. Weighting invariants.
void balancing() {
  Rng rng(6);
  double pre_sum = 0.0, pre_spread = 0.0, mil_spread = 0.0, renorm = 0.0;
  for (int t = 0; t < 20; ++t) {
    std::vector<balance::HierarchyRecord> recs;
    std::uniform_int_distribution<std::size_t> coh(0, 3), cls(0, 2), tiles(1, 12);
    for (int i = 0; i < 40; ++i) recs.push_back({CohortId{coh(rng)}, "s" + std::to_string(i), cls(rng), tiles(rng)});
    const auto w = balance::pretrain_weights(recs);
    std::map<std::size_t, double> per_cohort;
    std::size_t k = 0;
    double total = 0.0;
    for (const auto& r : recs)
      for (std::size_t j = 0; j < r.tiles; ++j) {
        per_cohort[r.cohort.value] += w[k];
        total += w[k++];
      }
    pre_sum = std::max(pre_sum, std::abs(total - 1.0));
    for (const auto& [c, s] : per_cohort) pre_spread = std::max(pre_spread, std::abs(s - 1.0 / per_cohort.size()));
    const auto m = balance::mil_weights(recs);
    std::map<std::pair<std::size_t, std::size_t>, double> combo;
    for (std::size_t i = 0; i < recs.size(); ++i) combo[{recs[i].cohort.value, recs[i].label}] += m[i];
    for (const auto& [key, s] : combo) mil_spread = std::max(mil_spread, std::abs(s - 1.0 / combo.size()));
    const auto b = balance::batch_renormalize(m);
    double mean = 0.0;
    for (double v : b) mean += v;
    renorm = std::max(renorm, std::abs(mean / b.size() - 1.0));
  }
  std::vector<double> ex(9, 1.0);
  ex.push_back(20.0);
  const auto [mu, sd] = oracle::mean_std(ex);
  const double upper = mu + 2.0 * sd;
  const auto clipped = balance::clip_weights(ex);
  bool ex_ok = clipped.back() == upper;
  for (int i = 0; i < 9; ++i) ex_ok = ex_ok && clipped[i] == 1.0;
  const bool pass = pre_sum <= 1e-12 && pre_spread <= 1e-12 && mil_spread <= 1e-12 && renorm <= 1e-12 && ex_ok;
  report(6, pass, "hierarchical weights, 2-sigma clip, batch renormalization",
         "pretrain |sum-1| " + fmt("%.1e", pre_sum) + ", cohort spread " + fmt("%.1e", pre_spread) +
             ", MIL combination spread " + fmt("%.1e", mil_spread) + ", renorm |mean-1| " + fmt("%.1e", renorm) +
             " (all <= 1e-12); clip example upper " + fmt("%.6f", clipped.back()) + " vs oracle " + fmt("%.6f", upper));
}

// 7 and 9 share one set of lambda-sweep runs.
void bias_experiments() {
  const std::vector<double> lambdas{0.0, 0.25, 0.5, 1.0};
  const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  const auto t0 = Clock::now();
  std::vector<std::vector<acceptance::RunOutcome>> runs;
  for (auto s : seeds) {
    runs.emplace_back();
    for (double l : lambdas) {
      runs.back().push_back(acceptance::run_fold0(acceptance::biased_config(s, l), 0.0));
      const auto& r = runs.back().back();
      std::printf("  seed %llu lambda %.2f: task %.3f probe %.3f general %.3f (%.1fs)\n",
                  static_cast<unsigned long long>(s), l, r.task_auc, r.probe_auc, r.general_auc, r.seconds);
      std::fflush(stdout);
    }
  }
  const double secs = since(t0);
  double probe0 = 0, probe1 = 0, task0 = 0, task1 = 0;
  std::size_t best_positive = 0;
  for (const auto& r : runs) {
    probe0 += r[0].probe_auc / seeds.size();
    probe1 += r[3].probe_auc / seeds.size();
    task0 += r[0].task_auc / seeds.size();
    task1 += r[3].task_auc / seeds.size();
    double best_pos = 0.0;
    for (std::size_t i = 1; i < r.size(); ++i) best_pos = std::max(best_pos, r[i].general_auc);
    best_positive += best_pos > r[0].general_auc;
  }
  const bool p7 = probe0 >= 0.80 && probe0 - probe1 >= 0.15 && task0 - task1 <= 0.05 && secs < 1800.0;
  report(7, p7, "MI penalty removes cohort information at little task cost (5 seeds)",
         "probe@0 " + fmt("%.3f", probe0) + " >= 0.80; probe drop " + fmt("%.3f", probe0 - probe1) +
             " >= 0.15; task drop " + fmt("%.3f", task0 - task1) + " <= 0.05; " + fmt("%.0f", secs) + "s < 1800s");
  report(9, best_positive >= 4, "best generalization AUC at lambda > 0",
         std::to_string(best_positive) + "/5 seeds >= 4");
}

// 8. Cohort-aware encoder against the plain encoder on decoy images.
void encoder_ablation() {
  double cavit = 0.0, plain = 0.0;
  for (std::uint64_t s = 1; s <= 5; ++s) {
    const auto a = acceptance::run_fold0(acceptance::decoy_image_config(s, train::EncoderMode::Cavit), std::nullopt);
    const auto b = acceptance::run_fold0(acceptance::decoy_image_config(s, train::EncoderMode::PlainVit), std::nullopt);
    std::printf("  seed %llu: cavit %.3f plain-vit %.3f (%.1fs)\n", static_cast<unsigned long long>(s), a.task_auc,
                b.task_auc, a.seconds + b.seconds);
    std::fflush(stdout);
    cavit += a.task_auc / 5.0;
    plain += b.task_auc / 5.0;
  }
  report(8, cavit - plain >= 0.02, "cohort-aware encoder beats plain ViT on planted cohort signals",
         "mean task AUC cavit " + fmt("%.3f", cavit) + " vs plain " + fmt("%.3f", plain) + ", gap " +
             fmt("%.3f", cavit - plain) + " >= 0.02");
}

// 10. Splits, bagging and AUC against oracles.
void protocol() {
  data::SynthConfig s;
  s.cohorts = 3;
  s.patients_per_cohort = {37, 52, 44};
  s.slides_per_patient = 2;
  s.bias = 0.4;
  s.geometry.feature_dim = 4;
  s.min_tiles = 2;
  s.max_tiles = 3;
  s.seed = 10;
  const data::Dataset d = data::generate(s);
  std::map<std::string, std::pair<std::size_t, std::size_t>> stratum;
  for (const auto& b : d.bags) stratum.emplace(data::patient_key(b), std::make_pair(b.cohort.value, b.label));
  std::map<std::pair<std::size_t, std::size_t>, double> global;
  for (const auto& [p, st] : stratum) global[st] += 1.0;
  std::size_t leaks = 0;
  double worst_dev = 0.0;
  std::set<std::string> tested;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto folds = data::stratified_patient_kfold(d, 5, seed);
    tested.clear();
    for (const auto& f : folds) {
      std::set<std::string> tr(f.train_patients.begin(), f.train_patients.end()),
          va(f.val_patients.begin(), f.val_patients.end());
      std::map<std::pair<std::size_t, std::size_t>, double> in;
      for (const auto& p : f.test_patients) {
        leaks += tr.count(p) + va.count(p) + tested.count(p);
        tested.insert(p);
        in[stratum.at(p)] += 1.0;
      }
      for (const auto& p : f.val_patients) leaks += tr.count(p);
      // Bag indices must agree with the patient lists.
      for (std::size_t i : f.train) leaks += tr.count(data::patient_key(d.bags[i])) ? 0 : 1;
      for (const auto& [st, n] : global) worst_dev = std::max(worst_dev, std::abs(in[st] - n / 5.0));
    }
    leaks += tested.size() == stratum.size() ? 0 : 1;
  }

  // Constructed metric list: the three best, ties resolved toward the earlier epoch.
  std::vector<train::Checkpoint> cks(8);
  const double val[] = {0.61, 0.74, 0.70, 0.74, 0.52, 0.69, 0.70, 0.55};
  for (std::size_t i = 0; i < 8; ++i) {
    cks[i].epoch = i;
    cks[i].metrics["val_auc"] = val[i];
  }
  const auto top = train::bag_models(cks, 3);
  const bool top_ok = top.size() == 3 && top[0].epoch == 1 && top[1].epoch == 3 && top[2].epoch == 2;

  Rng rng(10);
  std::size_t auc_cases = 0, auc_mismatch = 0;
  for (std::size_t n = 1; n <= 20; ++n)
    for (int t = 0; t < 200; ++t) {
      std::uniform_int_distribution<int> lvl(0, 1 + t % 6), bit(0, 1);
      std::vector<double> sc(n);
      std::vector<int> y(n);
      for (std::size_t i = 0; i < n; ++i) {
        sc[i] = lvl(rng) * 0.25;
        y[i] = bit(rng);
      }
      const auto a = train::auc(sc, y), o = oracle::pair_count_auc(sc, y);
      ++auc_cases;
      auc_mismatch += (a.has_value() != o.has_value() || (a && *a != *o)) ? 1 : 0;
    }
  const bool pass = leaks == 0 && worst_dev <= 1.0 && top_ok && auc_mismatch == 0;
  report(10, pass, "patient-level splits, top-3 bagging, AUC oracle",
         std::to_string(leaks) + " leaks; worst stratum deviation " + fmt("%.2f", worst_dev) +
             " <= 1 patient; top-3 " + (top_ok ? "correct" : "WRONG") + "; AUC exact on " +
             std::to_string(auc_cases - auc_mismatch) + "/" + std::to_string(auc_cases) + " tied cases");
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 11. The full train command path twice with one seed.
void determinism() {
  const auto cfg = acceptance::determinism_config();
  const data::Dataset d = data::generate(cfg.synth);
  std::vector<std::string> reports;
  for (int run = 0; run < 2; ++run) {
    const fs::path dir = fs::temp_directory_path() / ("mcmil_acceptance_det_" + std::to_string(run));
    fs::remove_all(dir);
    train::write_cv_outputs(dir, train::cross_validate({&d, train::to_json(cfg)}, cfg.train));
    reports.push_back(slurp(dir / "aggregate.json"));
    fs::remove_all(dir);
  }
  const bool same = !reports[0].empty() && reports[0] == reports[1];
  report(11, same, "fixed-seed training reproduces the aggregate report bitwise",
         std::to_string(reports[0].size()) + " bytes, " + (same ? "identical" : "DIFFERENT"));
}

}  // namespace

int main() {
  log::set_threshold(log::Level::Warn);
  gradients();
  routing();
  reduction();
  gaussian_mi();
  identities();
  balancing();
  bias_experiments();
  encoder_ablation();
  protocol();
  determinism();
  std::sort(results.begin(), results.end(), [](const Line& a, const Line& b) { return a.id < b.id; });
  std::printf("\nsummary\n");
  int failed = 0;
  for (const auto& r : results) {
    std::printf("%s criterion %d: %s | %s\n", r.pass ? "PASS" : "FAIL", r.id, r.what.c_str(), r.measured.c_str());
    failed += r.pass ? 0 : 1;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(results.size()) - failed, results.size());
  return failed == 0 ? 0 : 1;
}
