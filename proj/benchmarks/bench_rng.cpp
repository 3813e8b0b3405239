#include <benchmark/benchmark.h>

#include "saecount/rng.hpp"

using namespace saecount;

static void BM_PoissonSmallMu(benchmark::State& state) {
  RngHandle rng(1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(sample_poisson(rng, 5.0));
  }
}
BENCHMARK(BM_PoissonSmallMu);

static void BM_PoissonLargeMu(benchmark::State& state) {
  RngHandle rng(2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(sample_poisson(rng, 5000.0));
  }
}
BENCHMARK(BM_PoissonLargeMu);

static void BM_NegBinom(benchmark::State& state) {
  RngHandle rng(3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(sample_negbinom(rng, 8.0, 1.0));
  }
}
BENCHMARK(BM_NegBinom);

static void BM_StratifiedSample(benchmark::State& state) {
  RngHandle rng(4);
  const int n = 50000;
  std::vector<std::int64_t> domains;
  std::vector<double> y;
  Eigen::MatrixXd x(n, 2);
  for (int i = 0; i < n; ++i) {
    domains.push_back(1 + i / 1000);
    y.push_back(static_cast<double>(i % 7));
    x(i, 0) = sample_uniform(rng, -1.0, 1.0);
    x(i, 1) = sample_normal(rng, 0.0, 1.0);
  }
  const Population pop(domains, x, {"x1", "x2"}, y);
  std::map<std::int64_t, int> plan;
  const auto& sizes = model_based_sample_plan_50();
  for (int d = 0; d < 50; ++d) plan[d + 1] = sizes[static_cast<std::size_t>(d)];
  for (auto _ : state) {
    Sample s = stratified_srswor(rng, pop, plan);
    benchmark::DoNotOptimize(s);
  }
}
BENCHMARK(BM_StratifiedSample);
