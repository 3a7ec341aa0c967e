// SPDX-License-Identifier: Apache-2.0
#include "mcmil/verify/suites.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <memory>
#include <set>

#include "mcmil/attention/cohort_attention.hpp"
#include "mcmil/balance/weights.hpp"
#include "mcmil/data/split.hpp"
#include "mcmil/data/synth.hpp"
#include "mcmil/diff/finite_diff.hpp"
#include "mcmil/encoder/cavit.hpp"
#include "mcmil/error.hpp"
#include "mcmil/mi/adversary.hpp"
#include "mcmil/mil/mil.hpp"
#include "mcmil/train/metrics.hpp"
#include "mcmil/train/trainer.hpp"

namespace mcmil::verify {

using diff::Graph;
using diff::GraphOptions;
using diff::NamedTensors;
using diff::ParameterSet;
using diff::Tensor;
using diff::Var;

namespace {

Tensor uni(std::size_t r, std::size_t c, Rng& rng) { return uniform_tensor(r, c, 1.0, rng); }

/// Redraw entries lying within `margin` of any of `kinks`.
Tensor away_from(Tensor t, const std::vector<double>& kinks, double margin, Rng& rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (double& v : t.data()) {
    auto near = [&] {
      return std::any_of(kinks.begin(), kinks.end(), [&](double k) { return std::abs(v - k) < margin; });
    };
    while (near()) v = dist(rng);
  }
  return t;
}

/// Redraw until every column's largest entry leads the runner-up by `gap`.
Tensor distinct_column_max(std::size_t r, std::size_t c, double gap, Rng& rng) {
  for (;;) {
    Tensor t = uni(r, c, rng);
    bool ok = true;
    for (std::size_t j = 0; j < c && ok; ++j) {
      std::vector<double> col;
      for (std::size_t i = 0; i < r; ++i) col.push_back(t(i, j));
      std::sort(col.rbegin(), col.rend());
      ok = r < 2 || col[0] - col[1] > gap;
    }
    if (ok) return t;
  }
}

/// Adds U(-scale, scale) to every parameter so no branch sits at a special
/// initialization (zero QA output layers, unit layer-norm gains).
void jitter(ParameterSet& params, double scale, Rng& rng) {
  for (const auto& name : params.names()) {
    Tensor t = params.at(name);
    const Tensor noise = uniform_tensor(t.rows(), t.cols(), scale, rng);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += noise[i];
    params.set(name, t);
  }
}

using Build = std::function<Var(Graph&, const ParameterSet&)>;

GradientCase make(std::string name, ParameterSet point, Build build) {
  return {std::move(name), std::move(point), std::move(build)};
}

ParameterSet pts(std::initializer_list<std::pair<const char*, Tensor>> items) {
  ParameterSet p;
  for (const auto& [k, v] : items) p.add(k, v);
  return p;
}

Var P(Graph& g, const ParameterSet& p, const char* name) { return g.param(p, name); }

}  // namespace

std::vector<GradientCase> gradient_cases(Rng& rng) {
  std::vector<GradientCase> cs;
  using G = Graph;
  using PS = ParameterSet;

  // Tape primitives.
  cs.push_back(make("matmul", pts({{"a", uni(3, 4, rng)}, {"b", uni(4, 2, rng)}}),
                    [](G& g, const PS& p) { return g.matmul(P(g, p, "a"), P(g, p, "b")); }));
  cs.push_back(make("matmul_nt", pts({{"a", uni(3, 4, rng)}, {"b", uni(2, 4, rng)}}),
                    [](G& g, const PS& p) { return g.matmul_nt(P(g, p, "a"), P(g, p, "b")); }));
  cs.push_back(make("transpose", pts({{"a", uni(3, 4, rng)}}), [](G& g, const PS& p) { return g.transpose(P(g, p, "a")); }));
  cs.push_back(make("add", pts({{"a", uni(3, 4, rng)}, {"b", uni(3, 4, rng)}}),
                    [](G& g, const PS& p) { return g.add(P(g, p, "a"), P(g, p, "b")); }));
  cs.push_back(make("sub", pts({{"a", uni(3, 4, rng)}, {"b", uni(3, 4, rng)}}),
                    [](G& g, const PS& p) { return g.sub(P(g, p, "a"), P(g, p, "b")); }));
  cs.push_back(make("mul", pts({{"a", uni(3, 4, rng)}, {"b", uni(3, 4, rng)}}),
                    [](G& g, const PS& p) { return g.mul(P(g, p, "a"), P(g, p, "b")); }));
  cs.push_back(make("add_row", pts({{"a", uni(3, 4, rng)}, {"r", uni(1, 4, rng)}}),
                    [](G& g, const PS& p) { return g.add_row(P(g, p, "a"), P(g, p, "r")); }));
  cs.push_back(make("mul_col", pts({{"a", uni(3, 4, rng)}, {"c", uni(3, 1, rng)}}),
                    [](G& g, const PS& p) { return g.mul_col(P(g, p, "a"), P(g, p, "c")); }));
  cs.push_back(make("scale", pts({{"a", uni(3, 4, rng)}}), [](G& g, const PS& p) { return g.scale(P(g, p, "a"), 1.7); }));
  cs.push_back(make("add_scalar", pts({{"a", uni(3, 4, rng)}}),
                    [](G& g, const PS& p) { return g.add_scalar(P(g, p, "a"), 0.3); }));
  cs.push_back(make("tanh", pts({{"a", uni(3, 4, rng)}}), [](G& g, const PS& p) { return g.tanh(P(g, p, "a")); }));
  cs.push_back(make("sigmoid", pts({{"a", uni(3, 4, rng)}}), [](G& g, const PS& p) { return g.sigmoid(P(g, p, "a")); }));
  cs.push_back(make("softplus", pts({{"a", uni(3, 4, rng)}}), [](G& g, const PS& p) { return g.softplus(P(g, p, "a")); }));
  cs.push_back(make("relu", pts({{"a", away_from(uni(3, 4, rng), {0.0}, 1e-2, rng)}}),
                    [](G& g, const PS& p) { return g.relu(P(g, p, "a")); }));
  cs.push_back(make("gelu", pts({{"a", uni(3, 4, rng)}}), [](G& g, const PS& p) { return g.gelu(P(g, p, "a")); }));
  cs.push_back(make("exp", pts({{"a", uni(3, 4, rng)}}), [](G& g, const PS& p) { return g.exp(P(g, p, "a")); }));
  {
    Tensor a = uni(3, 4, rng);
    for (double& v : a.data()) v = std::abs(v) + 0.5;
    cs.push_back(make("log", pts({{"a", a}}), [](G& g, const PS& p) { return g.log(P(g, p, "a")); }));
  }
  cs.push_back(make("clip", pts({{"a", away_from(uni(3, 4, rng), {-0.5, 0.5}, 1e-2, rng)}}),
                    [](G& g, const PS& p) { return g.clip(P(g, p, "a"), -0.5, 0.5); }));
  cs.push_back(make("softmax_rows", pts({{"a", uni(3, 4, rng)}}),
                    [](G& g, const PS& p) { return g.softmax_rows(P(g, p, "a")); }));
  cs.push_back(make("log_softmax_rows", pts({{"a", uni(3, 4, rng)}}),
                    [](G& g, const PS& p) { return g.log_softmax_rows(P(g, p, "a")); }));
  cs.push_back(make("layer_norm_rows", pts({{"x", uni(3, 5, rng)}, {"gamma", uni(1, 5, rng)}, {"beta", uni(1, 5, rng)}}),
                    [](G& g, const PS& p) {
                      return g.layer_norm_rows(P(g, p, "x"), P(g, p, "gamma"), P(g, p, "beta"));
                    }));
  cs.push_back(make("sum_all", pts({{"a", uni(3, 4, rng)}}), [](G& g, const PS& p) { return g.sum_all(P(g, p, "a")); }));
  cs.push_back(make("mean_all", pts({{"a", uni(3, 4, rng)}}), [](G& g, const PS& p) { return g.mean_all(P(g, p, "a")); }));
  cs.push_back(make("sum_rows", pts({{"a", uni(3, 4, rng)}}), [](G& g, const PS& p) { return g.sum_rows(P(g, p, "a")); }));
  cs.push_back(make("mean_rows", pts({{"a", uni(3, 4, rng)}}), [](G& g, const PS& p) { return g.mean_rows(P(g, p, "a")); }));
  cs.push_back(make("max_rows", pts({{"a", distinct_column_max(4, 3, 1e-2, rng)}}),
                    [](G& g, const PS& p) { return g.max_rows(P(g, p, "a")); }));
  cs.push_back(make("sum_cols", pts({{"a", uni(3, 4, rng)}}), [](G& g, const PS& p) { return g.sum_cols(P(g, p, "a")); }));
  cs.push_back(make("concat_cols", pts({{"a", uni(3, 2, rng)}, {"b", uni(3, 3, rng)}}),
                    [](G& g, const PS& p) { return g.concat_cols({P(g, p, "a"), P(g, p, "b")}); }));
  cs.push_back(make("concat_rows", pts({{"a", uni(2, 3, rng)}, {"b", uni(1, 3, rng)}}),
                    [](G& g, const PS& p) { return g.concat_rows({P(g, p, "a"), P(g, p, "b")}); }));
  cs.push_back(make("slice_rows", pts({{"a", uni(4, 3, rng)}}),
                    [](G& g, const PS& p) { return g.slice_rows(P(g, p, "a"), 1, 2); }));
  cs.push_back(make("slice_cols", pts({{"a", uni(3, 4, rng)}}),
                    [](G& g, const PS& p) { return g.slice_cols(P(g, p, "a"), 1, 2); }));
  cs.push_back(make("gather_cols", pts({{"a", uni(3, 4, rng)}}),
                    [](G& g, const PS& p) { return g.gather_cols(P(g, p, "a"), {2, 0, 2}); }));
  cs.push_back(make("pairwise_sum", pts({{"a", uni(3, 4, rng)}, {"b", uni(2, 4, rng)}}),
                    [](G& g, const PS& p) { return g.pairwise_sum(P(g, p, "a"), P(g, p, "b")); }));
  cs.push_back(make("reshape", pts({{"a", uni(3, 4, rng)}}),
                    [](G& g, const PS& p) { return g.reshape(P(g, p, "a"), 2, 6); }));

  // Cohort-aware attention.
  cs.push_back(make("cohort_aware_query",
                    pts({{"q_d", uni(4, 3, rng)}, {"q_c", uni(4, 3, rng)}, {"s_d", uni(4, 1, rng)}, {"s_c", uni(4, 1, rng)}}),
                    [](G& g, const PS& p) {
                      auto ca = attention::cohort_aware_query(g, P(g, p, "q_d"), P(g, p, "q_c"), P(g, p, "s_d"),
                                                              P(g, p, "s_c"));
                      return g.concat_cols({ca.q_ca, ca.alpha_d, ca.alpha_c});
                    }));
  cs.push_back(make("scaled_dot_product_attention", pts({{"q", uni(4, 3, rng)}, {"k", uni(5, 3, rng)}, {"v", uni(5, 2, rng)}}),
                    [](G& g, const PS& p) {
                      return attention::scaled_dot_product_attention(g, P(g, p, "q"), P(g, p, "k"), P(g, p, "v"));
                    }));
  {
    attention::QueryAttentionNet qa("qa", 3, 5);
    ParameterSet p;
    qa.init(p, rng);
    jitter(p, 0.5, rng);
    p.add("q", uni(4, 3, rng));
    cs.push_back(make("query_attention", p, [qa](G& g, const PS& ps) { return qa.scores(g, ps, P(g, ps, "q")); }));
  }
  {
    attention::CohortQueryBank bank("bank", 6, 3, 2);
    ParameterSet p;
    bank.init(p, rng);
    jitter(p, 0.3, rng);
    p.add("x", uni(4, 6, rng));
    cs.push_back(make("cohort_query_bank", p, [bank](G& g, const PS& ps) {
      auto q = bank.project(g, ps, P(g, ps, "x"), CohortId{1});
      return g.concat_cols({q.q_d, q.q_c, q.k, q.v});
    }));
  }
  for (auto mode : {attention::QueryMode::CohortAware, attention::QueryMode::DatasetOnly}) {
    attention::McaaConfig mc;
    mc.dim = 6;
    mc.heads = 2;
    mc.head_dim = 3;
    mc.cohorts = 2;
    mc.qa_hidden = 4;
    attention::MultiheadCohortAttention mcaa("mcaa", mc);
    ParameterSet p;
    mcaa.init(p, rng);
    jitter(p, 0.3, rng);
    p.add("x", uni(4, 6, rng));
    const bool aware = mode == attention::QueryMode::CohortAware;
    cs.push_back(make(aware ? "mcaa_cohort_aware" : "mcaa_dataset_only", p, [mcaa, mode](G& g, const PS& ps) {
      return mcaa.forward(g, ps, P(g, ps, "x"), CohortId{1}, mode);
    }));
  }

  // Encoder.
  {
    encoder::CaVitConfig ec;
    ec.side = 8;
    ec.patch_size = 4;
    ec.dim = 8;
    ec.depth = 2;
    ec.heads = 2;
    ec.head_dim = 4;
    ec.cohorts = 2;
    auto enc = std::make_shared<encoder::CaVitEncoder>(ec);
    ParameterSet p;
    enc->init(p, rng);
    jitter(p, 0.2, rng);
    ParameterSet pb = p;
    pb.add("tokens", uni(ec.num_patches() + 1, ec.dim, rng));
    cs.push_back(make("cavit_block", pb, [enc](G& g, const PS& ps) {
      return enc->block(g, ps, 1, P(g, ps, "tokens"), CohortId{0}, attention::QueryMode::CohortAware);
    }));
    Tensor pixels({1, 8, 8}, uni(1, 64, rng).storage());
    encoder::TileImage tile{pixels, CohortId{1}};
    cs.push_back(make("cavit_encode", p, [enc, tile](G& g, const PS& ps) {
      return enc->encode(g, ps, tile, attention::QueryMode::CohortAware);
    }));
    cs.push_back(make("vit_encode", p, [enc, tile](G& g, const PS& ps) {
      return enc->encode(g, ps, tile, attention::QueryMode::DatasetOnly);
    }));
  }

  // MIL aggregators and heads.
  for (auto kind : {mil::AggregatorKind::Mean, mil::AggregatorKind::Max, mil::AggregatorKind::Abmil,
                    mil::AggregatorKind::Mha}) {
    mil::MilConfig mc;
    mc.kind = kind;
    mc.dim = 6;
    mc.classes = 3;
    mc.attn_hidden = 4;
    mc.heads = 2;
    auto model = std::make_shared<mil::MilModel>(mc);
    ParameterSet p;
    model->init(p, rng);
    jitter(p, 0.3, rng);
    p.add("f", distinct_column_max(5, 6, 1e-2, rng));
    cs.push_back(make("mil_" + mil::to_string(kind), p, [model](G& g, const PS& ps) {
      return model->logits(g, ps, model->aggregate(g, ps, P(g, ps, "f")));
    }));
  }
  cs.push_back(make("weighted_cross_entropy", pts({{"logits", uni(4, 3, rng)}}), [](G& g, const PS& p) {
    return mil::weighted_cross_entropy(g, P(g, p, "logits"), {0, 2, 1, 2}, {1.0, 0.5, 2.0, 1.0});
  }));

  // MI score network and estimators.
  {
    mi::ScoreNetworkConfig nc{3, 2, 5};
    auto net = std::make_shared<mi::ScoreNetwork>(nc);
    ParameterSet p;
    net->init(p, rng);
    jitter(p, 0.3, rng);
    p.add("z", uni(4, 3, rng));
    p.add("c", uni(4, 2, rng));
    cs.push_back(make("mi_scores", p,
                      [net](G& g, const PS& ps) { return net->scores(g, ps, P(g, ps, "z"), P(g, ps, "c"), false); }));
    cs.push_back(make("mi_pair_scores", p, [net](G& g, const PS& ps) {
      return net->pair_scores(g, ps, P(g, ps, "z"), P(g, ps, "c"), false);
    }));
    cs.push_back(make("smile", p, [net](G& g, const PS& ps) {
      return mi::smile_graph(g, *net, ps, P(g, ps, "z"), P(g, ps, "c"), 5.0, false);
    }));
    cs.push_back(make("js_bound", p, [net](G& g, const PS& ps) {
      return mi::js_graph(g, *net, ps, P(g, ps, "z"), P(g, ps, "c"), false);
    }));
    cs.push_back(make("mine", p, [net](G& g, const PS& ps) {
      return mi::smile_graph(g, *net, ps, P(g, ps, "z"), P(g, ps, "c"), mi::kNoClip, false);
    }));

    mi::MiConfig mc;
    mc.network = nc;
    auto state = std::make_shared<mi::MIEstimatorState>(mc);
    state->init(rng);
    jitter(state->params, 0.3, rng);
    cs.push_back(make("mi_loss", pts({{"z", uni(4, 3, rng)}, {"c", uni(4, 2, rng)}}), [state](G& g, const PS& ps) {
      return mi::mi_loss(g, *state, P(g, ps, "z"), P(g, ps, "c"));
    }));
  }
  return cs;
}

Tensor output_at(const GradientCase& c) {
  Graph g(GraphOptions{});
  return g.value(c.build(g, c.point));
}

NamedTensors analytic_gradient(const GradientCase& c, const Tensor& projection, GraphOptions options) {
  Graph g(options);
  Var y = c.build(g, c.point);
  g.backward(y, projection);
  return g.param_gradients(c.point);
}

double projected_value(const GradientCase& c, const ParameterSet& point, const Tensor& projection) {
  Graph g(GraphOptions{});
  const Tensor& y = g.value(c.build(g, point));
  if (!y.same_shape(projection)) throw ShapeError("projected_value: projection shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * projection[i];
  return s;
}

GaussianMiResult gaussian_mi_experiment(const GaussianMiConfig& cfg) {
  if (cfg.samples < 2 || cfg.batch < 2 || cfg.eval_batch < 2) throw ConfigError("gaussian_mi_experiment: sizes must be >= 2");
  Rng rng(derive_seed(cfg.seed, 1));
  std::normal_distribution<double> normal(0.0, 1.0);
  const double mix = std::sqrt(1.0 - cfg.rho * cfg.rho);
  auto draw = [&](std::size_t n, Rng& r, Tensor& x, Tensor& y) {
    x = Tensor(n, 1);
    y = Tensor(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = normal(r);
      y[i] = cfg.rho * x[i] + mix * normal(r);
    }
  };
  Tensor x, y;
  draw(cfg.samples, rng, x, y);

  mi::MiConfig mc;
  mc.network = {1, 1, cfg.hidden};
  mc.tau = cfg.tau;
  mc.adam.lr = cfg.lr;
  mi::MIEstimatorState state(mc);
  Rng init(derive_seed(cfg.seed, 2));
  state.init(init);

  Rng pick(derive_seed(cfg.seed, 3));
  std::uniform_int_distribution<std::size_t> index(0, cfg.samples - 1);
  Tensor zb(cfg.batch, 1), cb(cfg.batch, 1);
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    for (std::size_t i = 0; i < cfg.batch; ++i) {
      const std::size_t j = index(pick);
      zb[i] = x[j];
      cb[i] = y[j];
    }
    mi::adversary_update(state, zb, cb);
  }

  GaussianMiResult out;
  const std::size_t chunks = std::max<std::size_t>(1, cfg.samples / cfg.eval_batch);
  for (std::size_t k = 0; k < chunks; ++k) {
    Tensor ze(cfg.eval_batch, 1), ce(cfg.eval_batch, 1);
    for (std::size_t i = 0; i < cfg.eval_batch; ++i) {
      ze[i] = x[(k * cfg.eval_batch + i) % cfg.samples];
      ce[i] = y[(k * cfg.eval_batch + i) % cfg.samples];
    }
    out.estimate += mi::smile_estimate(state.net, state.params, ze, ce, cfg.tau);
  }
  out.estimate /= static_cast<double>(chunks);

  std::vector<double> smile, mine;
  for (std::size_t s = 0; s < cfg.variance_seeds; ++s) {
    Rng r(derive_seed(cfg.seed, 100 + s));
    Tensor xs, ys;
    draw(cfg.eval_batch, r, xs, ys);
    smile.push_back(mi::smile_estimate(state.net, state.params, xs, ys, cfg.tau));
    mine.push_back(mi::mine_estimate(state.net, state.params, xs, ys));
  }
  auto variance = [](const std::vector<double>& v) {
    double m = 0.0, s = 0.0;
    for (double a : v) m += a;
    m /= static_cast<double>(v.size());
    for (double a : v) s += (a - m) * (a - m);
    return v.size() > 1 ? s / static_cast<double>(v.size() - 1) : 0.0;
  };
  out.smile_variance = variance(smile);
  out.mine_variance = variance(mine);
  return out;
}

// ---------------------------------------------------------------- suites

bool SuiteReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
}

namespace {

std::string num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

Tensor flatten(const NamedTensors& t) {
  std::vector<double> all;
  for (const auto& [k, v] : t) all.insert(all.end(), v.data().begin(), v.data().end());
  const std::size_t n = all.size();
  return Tensor({1, n}, std::move(all));
}

SuiteReport gradient_suite(const VerifyOptions& opt) {
  SuiteReport r{"gradients", {}, 0.0};
  constexpr double kEps = 1e-3;
  std::map<std::string, double> worst;
  std::vector<std::string> order;
  for (std::size_t inst = 0; inst < opt.gradient_instances; ++inst) {
    Rng rng(derive_seed(opt.seed, 1000 + inst));
    for (const auto& c : gradient_cases(rng)) {
      const Tensor y = output_at(c);
      const Tensor proj = uniform_tensor(y.rows(), y.cols(), 1.0, rng);
      GraphOptions go;
      go.flip_clip_gradient = opt.flip_clip_gradient;
      const NamedTensors analytic = analytic_gradient(c, proj, go);
      NamedTensors numeric;
      for (const auto& name : c.point.names()) {
        numeric[name] = diff::finite_diff_grad(
            [&](const Tensor& v) {
              ParameterSet p = c.point;
              p.set(name, v);
              return projected_value(c, p, proj);
            },
            c.point.at(name), kEps);
      }
      const double err = diff::relative_error(flatten(analytic), flatten(numeric));
      if (!worst.count(c.name)) order.push_back(c.name);
      worst[c.name] = std::max(worst[c.name], err);
    }
  }
  for (const auto& name : order) {
    r.checks.push_back({name, worst[name] < 1e-4, "max relative error " + num(worst[name])});
  }
  return r;
}

encoder::CaVitConfig desk_encoder(std::size_t cohorts) {
  encoder::CaVitConfig ec;
  ec.cohorts = cohorts;
  return ec;
}

encoder::TileImage random_tile(const encoder::CaVitConfig& ec, CohortId c, Rng& rng) {
  const std::size_t n = ec.channels * ec.side * ec.side;
  return {Tensor({ec.channels, ec.side, ec.side}, uniform_tensor(1, n, 1.0, rng).storage()), c};
}

SuiteReport routing_suite(const VerifyOptions& opt) {
  SuiteReport r{"selective_routing", {}, 0.0};
  Rng rng(derive_seed(opt.seed, 2000));
  const auto ec = desk_encoder(3);
  encoder::CaVitEncoder enc(ec);
  ParameterSet params;
  enc.init(params, rng);
  Graph g;
  std::vector<Var> outs;
  for (int i = 0; i < 4; ++i) outs.push_back(enc.encode(g, params, random_tile(ec, CohortId{0}, rng), attention::QueryMode::CohortAware));
  Var y = g.concat_rows(outs);
  g.backward(y, uniform_tensor(outs.size(), ec.dim, 1.0, rng));
  const NamedTensors grads = g.param_gradients(params);
  bool others_zero = true, own_nonzero = true;
  std::size_t checked = 0;
  for (std::size_t l = 0; l < ec.depth; ++l) {
    for (std::size_t h = 0; h < ec.heads; ++h) {
      const auto& bank = enc.attention(l).bank(h);
      const Tensor& own = grads.at(bank.w_q_c(0));
      own_nonzero = own_nonzero && std::any_of(own.data().begin(), own.data().end(), [](double v) { return v != 0.0; });
      for (std::size_t c = 1; c < ec.cohorts; ++c) {
        const Tensor& t = grads.at(bank.w_q_c(c));
        others_zero = others_zero && std::all_of(t.data().begin(), t.data().end(), [](double v) { return v == 0.0; });
        ++checked;
      }
    }
  }
  r.checks.push_back({"other_cohort_queries_exactly_zero", others_zero, std::to_string(checked) + " matrices"});
  r.checks.push_back({"own_cohort_query_receives_gradient", own_nonzero, ""});
  return r;
}

SuiteReport reduction_suite(const VerifyOptions& opt) {
  SuiteReport r{"plain_vit_reduction", {}, 0.0};
  Rng rng(derive_seed(opt.seed, 3000));
  const auto ec = desk_encoder(2);
  encoder::CaVitEncoder enc(ec);
  ParameterSet params;
  enc.init(params, rng);
  for (std::size_t l = 0; l < ec.depth; ++l) {
    for (std::size_t h = 0; h < ec.heads; ++h) {
      const auto& bank = enc.attention(l).bank(h);
      for (std::size_t c = 0; c < ec.cohorts; ++c) params.set(bank.w_q_c(c), params.at(bank.w_q_d()));
    }
  }
  bool same = true;
  for (std::size_t c = 0; c < ec.cohorts; ++c) {
    const auto tile = random_tile(ec, CohortId{c}, rng);
    same = same && enc.encode_tile(params, tile, attention::QueryMode::CohortAware) ==
                       enc.encode_tile(params, tile, attention::QueryMode::DatasetOnly);
  }
  r.checks.push_back({"copied_queries_match_plain_vit_bitwise", same, ""});

  Graph g;
  Var qd = g.constant(uniform_tensor(5, 4, 1.0, rng));
  Var qc = g.constant(uniform_tensor(5, 4, 1.0, rng));
  auto ca = attention::cohort_aware_query(g, qd, qc, g.constant(Tensor(5, 1, 1000.0)), g.constant(Tensor(5, 1, 0.0)));
  const bool saturated = g.value(ca.alpha_d) == Tensor(5, 1, 1.0) && g.value(ca.q_ca) == g.value(qd);
  r.checks.push_back({"saturated_mixing_returns_shared_query_bitwise", saturated, ""});
  return r;
}

SuiteReport estimator_suite(const VerifyOptions& opt) {
  SuiteReport r{"estimator_identities", {}, 0.0};
  Rng rng(derive_seed(opt.seed, 4000));
  mi::ScoreNetwork net({4, 3, 16});
  ParameterSet zero;
  net.init(zero, rng);
  for (const auto& name : zero.names()) zero.set(name, Tensor(zero.at(name).rows(), zero.at(name).cols()));
  std::vector<CohortId> cohorts;
  for (std::size_t i = 0; i < 12; ++i) cohorts.push_back(CohortId{i % 3});
  const Tensor z = uniform_tensor(12, 4, 1.0, rng);
  const Tensor c = mi::one_hot(cohorts, 3);
  const double s0 = mi::smile_estimate(net, zero, z, c, 5.0);
  const double m0 = mi::mine_estimate(net, zero, z, c);
  r.checks.push_back({"zero_network_gives_zero", s0 == 0.0 && m0 == 0.0, "smile " + num(s0) + " mine " + num(m0)});

  ParameterSet params;
  net.init(params, rng);
  jitter(params, 1.0, rng);
  const double si = mi::smile_estimate(net, params, z, c, mi::kNoClip);
  const double mi_ = mi::mine_estimate(net, params, z, c);
  r.checks.push_back({"unclipped_smile_equals_mine", std::abs(si - mi_) <= 1e-12, "diff " + num(std::abs(si - mi_))});

  constexpr double tau = 0.5;
  Graph g;
  Var t = net.pair_scores(g, params, g.constant(z), g.constant(c), true);
  Var e = g.exp(g.clip(t, -tau, tau));
  const Tensor& ev = g.value(e);
  const bool bounded = std::all_of(ev.data().begin(), ev.data().end(),
                                   [&](double v) { return v >= std::exp(-tau) && v <= std::exp(tau); });
  r.checks.push_back({"clipped_values_within_bounds", bounded, ""});

  mi::MiConfig mc;
  mc.network = {4, 3, 16};
  mc.adam.lr = 0.0;
  mi::MIEstimatorState state(mc);
  state.init(rng);
  const ParameterSet before = state.params;
  for (int i = 0; i < 3; ++i) mi::adversary_update(state, z, c);
  r.checks.push_back({"zero_learning_rate_leaves_adversary_unchanged", state.params == before, ""});
  return r;
}

SuiteReport mi_oracle_suite(const VerifyOptions& opt) {
  SuiteReport r{"mi_gaussian_oracle", {}, 0.0};
  GaussianMiConfig cfg;
  cfg.seed = opt.seed;
  const auto res = gaussian_mi_experiment(cfg);
  const double truth = -0.5 * std::log(1.0 - cfg.rho * cfg.rho);
  r.checks.push_back({"smile_within_0.1_nats", std::abs(res.estimate - truth) <= 0.1,
                      "estimate " + num(res.estimate) + " analytic " + num(truth)});
  r.checks.push_back({"smile_variance_not_above_mine", res.smile_variance <= res.mine_variance,
                      "smile " + num(res.smile_variance) + " mine " + num(res.mine_variance)});
  return r;
}

SuiteReport balancing_suite(const VerifyOptions& opt) {
  SuiteReport r{"balancing", {}, 0.0};
  Rng rng(derive_seed(opt.seed, 5000));
  std::vector<balance::HierarchyRecord> recs;
  std::uniform_int_distribution<std::size_t> tiles(1, 40), slides(1, 9);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < 2; ++y) {
      const std::size_t n = slides(rng) + c;
      for (std::size_t s = 0; s < n; ++s) {
        recs.push_back({CohortId{c}, "c" + std::to_string(c) + "y" + std::to_string(y) + "s" + std::to_string(s), y, tiles(rng)});
      }
    }
  }
  const auto pw = balance::pretrain_weights(recs);
  double total = 0.0;
  std::vector<double> per_cohort(3, 0.0);
  std::size_t k = 0;
  for (const auto& rec : recs) {
    for (std::size_t t = 0; t < rec.tiles; ++t, ++k) {
      total += pw[k];
      per_cohort[rec.cohort.value] += pw[k];
    }
  }
  const double spread = *std::max_element(per_cohort.begin(), per_cohort.end()) -
                        *std::min_element(per_cohort.begin(), per_cohort.end());
  r.checks.push_back({"pretrain_weights_sum_to_one", std::abs(total - 1.0) <= 1e-12, "sum " + num(total)});
  r.checks.push_back({"pretrain_cohort_sums_equal", spread <= 1e-12, "spread " + num(spread)});

  const auto mw = balance::mil_weights(recs);
  std::map<std::pair<std::size_t, std::size_t>, double> combo;
  for (std::size_t i = 0; i < recs.size(); ++i) combo[{recs[i].cohort.value, recs[i].label}] += mw[i];
  double lo = 1e300, hi = -1e300;
  for (const auto& [key, v] : combo) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  r.checks.push_back({"mil_combination_sums_equal", hi - lo <= 1e-12, "spread " + num(hi - lo)});

  std::vector<double> w(9, 1.0);
  w.push_back(20.0);
  double mean = 0.0;
  for (double v : w) mean += v;
  mean /= static_cast<double>(w.size());
  double var = 0.0;
  for (double v : w) var += (v - mean) * (v - mean);
  const double upper = mean + 2.0 * std::sqrt(var / static_cast<double>(w.size()));
  const auto clipped = balance::clip_weights(w);
  bool ones = std::all_of(clipped.begin(), clipped.end() - 1, [](double v) { return v == 1.0; });
  r.checks.push_back({"two_sigma_clip_example", ones && std::abs(clipped.back() - upper) <= 1e-12,
                      "upper " + num(clipped.back()) + " expected " + num(upper)});

  std::vector<double> batch(pw.begin(), pw.begin() + std::min<std::size_t>(pw.size(), 17));
  const auto norm = balance::batch_renormalize(batch);
  double m = 0.0;
  for (double v : norm) m += v;
  m /= static_cast<double>(norm.size());
  r.checks.push_back({"batch_renormalization_unit_mean", std::abs(m - 1.0) <= 1e-12, "mean " + num(m)});
  return r;
}

/// (concordant + ties / 2) / (positives * negatives).
std::optional<double> pair_count_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double num_ = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1.0;
        num_ += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
    }
  }
  if (pairs == 0.0) return std::nullopt;
  return num_ / pairs;
}

SuiteReport protocol_suite(const VerifyOptions& opt) {
  SuiteReport r{"protocol", {}, 0.0};
  data::SynthConfig sc;
  sc.cohorts = 3;
  sc.patients_per_cohort = {20, 25, 30};
  sc.slides_per_patient = 2;
  sc.min_tiles = 2;
  sc.max_tiles = 3;
  sc.geometry.kind = data::TileKind::Feature;
  sc.geometry.feature_dim = 4;
  sc.seed = opt.seed;
  const data::Dataset ds = data::generate(sc);
  const auto splits = data::stratified_patient_kfold(ds, 5, opt.seed, 0.1);

  std::map<std::string, std::pair<std::size_t, std::size_t>> stratum;
  for (const auto& b : ds.bags) stratum.emplace(data::patient_key(b), std::make_pair(b.cohort.value, b.label));
  std::map<std::pair<std::size_t, std::size_t>, double> global;
  for (const auto& [p, s] : stratum) global[s] += 1.0;

  bool leak_free = true, covered = true, proportional = true;
  std::multiset<std::string> tested;
  for (const auto& f : splits) {
    std::set<std::string> tr(f.train_patients.begin(), f.train_patients.end());
    std::set<std::string> va(f.val_patients.begin(), f.val_patients.end());
    for (const auto& p : f.test_patients) {
      leak_free = leak_free && !tr.count(p) && !va.count(p);
      tested.insert(p);
    }
    for (const auto& p : f.val_patients) leak_free = leak_free && !tr.count(p);
    for (std::size_t b : f.train) leak_free = leak_free && tr.count(data::patient_key(ds.bags[b]));
    std::map<std::pair<std::size_t, std::size_t>, double> counts;
    for (const auto& p : f.test_patients) counts[stratum.at(p)] += 1.0;
    for (const auto& [s, n] : global) proportional = proportional && std::abs(counts[s] - n / 5.0) <= 1.0;
  }
  for (const auto& [p, s] : stratum) covered = covered && tested.count(p) == 1;
  r.checks.push_back({"no_patient_leakage", leak_free, ""});
  r.checks.push_back({"every_patient_tested_once", covered, ""});
  r.checks.push_back({"fold_strata_within_one_patient", proportional, ""});

  const auto top = train::select_top({0.6, 0.7, 0.8, 0.9}, 3);
  r.checks.push_back({"top3_selection", top == std::vector<std::size_t>{3, 2, 1}, ""});

  Rng rng(derive_seed(opt.seed, 6000));
  std::uniform_int_distribution<int> len(2, 20), coin(0, 1), level(0, 5);
  bool exact = true;
  for (int t = 0; t < 500; ++t) {
    const int n = len(rng);
    std::vector<double> s;
    std::vector<int> y;
    for (int i = 0; i < n; ++i) {
      s.push_back(level(rng) / 5.0);
      y.push_back(coin(rng));
    }
    exact = exact && train::auc(s, y) == pair_count_auc(s, y);
  }
  r.checks.push_back({"auc_matches_pair_counting", exact, "500 cases"});
  return r;
}

}  // namespace

std::vector<std::string> suite_names() {
  return {"gradients", "selective_routing", "plain_vit_reduction", "estimator_identities",
          "mi_gaussian_oracle", "balancing", "protocol"};
}

SuiteReport run_suite(const std::string& name, const VerifyOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  SuiteReport r;
  if (name == "gradients") r = gradient_suite(options);
  else if (name == "selective_routing") r = routing_suite(options);
  else if (name == "plain_vit_reduction") r = reduction_suite(options);
  else if (name == "estimator_identities") r = estimator_suite(options);
  else if (name == "mi_gaussian_oracle") r = mi_oracle_suite(options);
  else if (name == "balancing") r = balancing_suite(options);
  else if (name == "protocol") r = protocol_suite(options);
  else throw ConfigError("unknown verification suite '" + name + "'");
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

std::vector<SuiteReport> run_all(const VerifyOptions& options) {
  std::vector<SuiteReport> out;
  for (const auto& n : suite_names()) out.push_back(run_suite(n, options));
  return out;
}

std::string format_report(const std::vector<SuiteReport>& reports) {
  std::string out;
  char buf[256];
  for (const auto& r : reports) {
    std::size_t failed = 0;
    for (const auto& c : r.checks) failed += c.passed ? 0 : 1;
    std::snprintf(buf, sizeof buf, "%-4s %-22s checks=%-3zu failed=%-3zu time=%.2fs\n", r.passed() ? "PASS" : "FAIL",
                  r.name.c_str(), r.checks.size(), failed, r.seconds);
    out += buf;
    for (const auto& c : r.checks) {
      if (!c.passed) out += "     failed: " + c.name + (c.detail.empty() ? "" : " (" + c.detail + ")") + "\n";
    }
  }
  return out;
}

}  // namespace mcmil::verify
