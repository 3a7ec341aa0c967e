// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "mcmil/attention/cohort_attention.hpp"
#include "mcmil/encoder/cavit.hpp"
#include "mcmil/mi/adversary.hpp"
#include "mcmil/mil/mil.hpp"

using namespace mcmil;

static void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const auto a = uniform_tensor(n, n, 1.0, rng);
  const auto b = uniform_tensor(n, n, 1.0, rng);
  for (auto _ : state) benchmark::DoNotOptimize(diff::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

static void BM_McaaForwardBackward(benchmark::State& state) {
  attention::McaaConfig cfg;
  attention::MultiheadCohortAttention mcaa("mcaa", cfg);
  diff::ParameterSet params;
  Rng rng(2);
  mcaa.init(params, rng);
  const auto x = uniform_tensor(17, cfg.dim, 1.0, rng);
  for (auto _ : state) {
    diff::Graph g;
    auto y = mcaa.forward(g, params, g.constant(x), CohortId{1}, attention::QueryMode::CohortAware);
    g.backward(g.sum_all(y));
    benchmark::DoNotOptimize(g.param_gradients(params));
  }
}
BENCHMARK(BM_McaaForwardBackward);

static void BM_EncodeTile(benchmark::State& state) {
  encoder::CaVitConfig cfg;
  encoder::CaVitEncoder enc(cfg);
  diff::ParameterSet params;
  Rng rng(3);
  enc.init(params, rng);
  encoder::TileImage tile{diff::Tensor({1, 16, 16}, uniform_tensor(1, 256, 1.0, rng).storage()), CohortId{0}};
  const auto mode = state.range(0) ? attention::QueryMode::CohortAware : attention::QueryMode::DatasetOnly;
  for (auto _ : state) benchmark::DoNotOptimize(enc.encode_tile(params, tile, mode));
}
BENCHMARK(BM_EncodeTile)->Arg(1)->Arg(0);

static void BM_MilPredict(benchmark::State& state) {
  mil::MilConfig cfg;
  cfg.kind = static_cast<mil::AggregatorKind>(state.range(0));
  mil::MilModel model(cfg);
  diff::ParameterSet params;
  Rng rng(4);
  model.init(params, rng);
  const auto f = uniform_tensor(64, cfg.dim, 1.0, rng);
  for (auto _ : state) benchmark::DoNotOptimize(model.predict(params, f));
}
BENCHMARK(BM_MilPredict)->DenseRange(0, 3);

static void BM_SmileEstimate(benchmark::State& state) {
  const auto b = static_cast<std::size_t>(state.range(0));
  mi::ScoreNetwork net({32, 3, 64});
  diff::ParameterSet params;
  Rng rng(5);
  net.init(params, rng);
  const auto z = uniform_tensor(b, 32, 1.0, rng);
  std::vector<CohortId> c;
  for (std::size_t i = 0; i < b; ++i) c.push_back(CohortId{i % 3});
  const auto onehot = mi::one_hot(c, 3);
  for (auto _ : state) benchmark::DoNotOptimize(mi::smile_estimate(net, params, z, onehot, 5.0));
}
BENCHMARK(BM_SmileEstimate)->Arg(16)->Arg(64);
BENCHMARK_MAIN();
