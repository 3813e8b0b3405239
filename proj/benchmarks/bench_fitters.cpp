#include <benchmark/benchmark.h>

#include "saecount/ebpp.hpp"
#include "saecount/gmerf.hpp"
#include "saecount/merf.hpp"
#include "saecount/rng.hpp"
#include "saecount/simlab.hpp"

using namespace saecount;

namespace {

Sample survey_fixture() {
  Scenario scenario;
  scenario.name = ScenarioName::normal_poisson;
  const GeneratedPopulation gen = generate_population(scenario, RngHandle(3));
  const auto plan = scenario.plan_map();
  RngHandle rng(4);
  return stratified_srswor(rng, gen.population, plan);
}

}  // namespace

static void BM_FitGmerf(benchmark::State& state) {
  const Sample sample = survey_fixture();
  GmerfParams params;
  params.forest.num_trees = static_cast<int>(state.range(0));
  for (auto _ : state) {
    GmerfFit fit = fit_gmerf(sample, params, RngHandle(5));
    benchmark::DoNotOptimize(fit);
  }
}
BENCHMARK(BM_FitGmerf)->Arg(100)->Arg(200)->Unit(benchmark::kMillisecond);

static void BM_FitMerf(benchmark::State& state) {
  const Sample sample = survey_fixture();
  MerfParams params;
  params.forest.num_trees = static_cast<int>(state.range(0));
  for (auto _ : state) {
    MerfFit fit = fit_merf(sample, params, RngHandle(6));
    benchmark::DoNotOptimize(fit);
  }
}
BENCHMARK(BM_FitMerf)->Arg(100)->Arg(200)->Unit(benchmark::kMillisecond);

static void BM_FitEbpp(benchmark::State& state) {
  const Sample sample = survey_fixture();
  for (auto _ : state) {
    GlmmFit fit = fit_poisson_glmm_pql(sample);
    benchmark::DoNotOptimize(fit);
  }
}
BENCHMARK(BM_FitEbpp)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
