#include <benchmark/benchmark.h>

#include <map>
#include <numeric>

#include "gpi/diagnostics.hpp"
#include "gpi/dml.hpp"
#include "gpi/propensity.hpp"
#include "gpi/simulation.hpp"
#include "gpi/tarnet.hpp"

namespace {

using namespace gpi;

const SimulatedSample& sample(std::size_t n) {
  static std::map<std::size_t, SimulatedSample> cache;
  auto it = cache.find(n);
  if (it == cache.end()) {
    SimulationScenario s = preset_from_name("moderate-separable");
    s.n = n;
    s.seed = 5;
    it = cache.emplace(n, generate_sample(s)).first;
  }
  return it->second;
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

void BM_Predict(benchmark::State& state) {
  const Dataset& d = sample(static_cast<std::size_t>(state.range(0))).data;
  const TarNetModel model = TarNetModel::initialize(NetworkConfig::defaults_for(d.d_r()));
  for (auto _ : state) benchmark::DoNotOptimize(predict(model, d.representations()));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Predict)->Arg(256)->Arg(2000);

void BM_Gradients(benchmark::State& state) {
  const Dataset& d = sample(2000).data;
  const TarNetModel model = TarNetModel::initialize(NetworkConfig::defaults_for(d.d_r()));
  std::vector<std::size_t> rows(static_cast<std::size_t>(state.range(0)));
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  for (auto _ : state) benchmark::DoNotOptimize(gradients(model, d, rows));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Gradients)->Arg(32)->Arg(256);

void BM_FitPropensity(benchmark::State& state) {
  const Dataset& d = sample(static_cast<std::size_t>(state.range(0))).data;
  const Matrix q = d.representations().leftCols(32);
  for (auto _ : state) benchmark::DoNotOptimize(fit_propensity(q, d.t(), PropensityConfig{}));
}
BENCHMARK(BM_FitPropensity)->Arg(1000)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_Ioss(benchmark::State& state) {
  const Dataset& d = sample(static_cast<std::size_t>(state.range(0))).data;
  const Matrix q = d.representations().leftCols(32);
  for (auto _ : state) benchmark::DoNotOptimize(ioss(q, d.t()));
}
BENCHMARK(BM_Ioss)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_ScoreAte(benchmark::State& state) {
  const SimulationScenario s = [] {
    SimulationScenario sc = preset_from_name("moderate-separable");
    sc.n = 2000;
    sc.seed = 5;
    return sc;
  }();
  const SimulatedSample& smp = sample(2000);
  const NuisanceValues v = oracle_nuisances(s, smp.truth);
  const std::vector<double> y(smp.data.y().begin(), smp.data.y().end());
  for (auto _ : state) benchmark::DoNotOptimize(score_ate(y, smp.data.t(), v));
}
BENCHMARK(BM_ScoreAte);

void BM_TrainFold(benchmark::State& state) {
  const Dataset& d = sample(1000).data;
  NetworkConfig c = NetworkConfig::defaults_for(d.d_r());
  c.max_epochs = 5;
  const auto rows = all_rows(500);
  for (auto _ : state) benchmark::DoNotOptimize(train(d, rows, c));
}
BENCHMARK(BM_TrainFold)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
