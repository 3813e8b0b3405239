#include <benchmark/benchmark.h>

#include <vector>

#include "saecount/lmm.hpp"
#include "saecount/rng.hpp"

using namespace saecount;

namespace {

struct LmmData {
  std::vector<double> target, offset, weights;
  std::vector<std::int64_t> domains;
};

LmmData make_data(int d_count, int n_i) {
  RngHandle rng(11);
  LmmData data;
  for (int d = 1; d <= d_count; ++d) {
    const double nu = sample_normal(rng, 0.0, 0.3);
    for (int j = 0; j < n_i; ++j) {
      data.target.push_back(nu + sample_normal(rng, 0.0, 1.0));
      data.offset.push_back(0.0);
      data.weights.push_back(sample_uniform(rng, 0.3, 3.0));
      data.domains.push_back(d);
    }
  }
  return data;
}

}  // namespace

static void BM_FitInterceptLmm(benchmark::State& state) {
  const LmmData data = make_data(50, static_cast<int>(state.range(0)));
  for (auto _ : state) {
    LmmFit fit = fit_intercept_lmm(data.target, data.offset, data.weights, data.domains);
    benchmark::DoNotOptimize(fit);
  }
}
BENCHMARK(BM_FitInterceptLmm)->Arg(18)->Arg(100);

static void BM_FitLmmWithMean(benchmark::State& state) {
  const LmmData data = make_data(50, static_cast<int>(state.range(0)));
  for (auto _ : state) {
    LmmMeanFit fit = fit_intercept_lmm_with_mean(data.target, data.offset, data.weights, data.domains);
    benchmark::DoNotOptimize(fit);
  }
}
BENCHMARK(BM_FitLmmWithMean)->Arg(18)->Arg(100);

static void BM_MarginalLoglik(benchmark::State& state) {
  const LmmData data = make_data(50, 18);
  const VarianceComponents vc{0.09, 1.0};
  for (auto _ : state) {
    benchmark::DoNotOptimize(marginal_loglik(vc, data.target, data.offset, data.weights, data.domains));
  }
}
BENCHMARK(BM_MarginalLoglik);
