#include <benchmark/benchmark.h>

#include <Eigen/Dense>

#include "saecount/forest.hpp"
#include "saecount/rng.hpp"

using namespace saecount;

namespace {

struct ForestData {
  Eigen::MatrixXd x;
  Eigen::VectorXd t;
  Eigen::VectorXd w;
};

ForestData make_data(int n) {
  RngHandle rng(42);
  ForestData data;
  data.x.resize(n, 2);
  data.t.resize(n);
  data.w = Eigen::VectorXd::Ones(n);
  for (int i = 0; i < n; ++i) {
    data.x(i, 0) = sample_uniform(rng, -1.0, 1.0);
    data.x(i, 1) = sample_normal(rng, 0.0, 1.0);
    data.t(i) = 2.0 * data.x(i, 0) + data.x(i, 1) * data.x(i, 1) + sample_normal(rng, 0.0, 0.5);
  }
  return data;
}

}  // namespace

static void BM_FitForest(benchmark::State& state) {
  const ForestData data = make_data(static_cast<int>(state.range(0)));
  ForestParams params{.num_trees = 200};
  for (auto _ : state) {
    Forest forest = fit_forest(data.x, data.t, data.w, params, RngHandle(7));
    benchmark::DoNotOptimize(forest);
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_FitForest)->Arg(256)->Arg(921)->Arg(2048)->Complexity();

static void BM_ForestPredictCensus(benchmark::State& state) {
  const ForestData train = make_data(921);
  const ForestData census = make_data(static_cast<int>(state.range(0)));
  const Forest forest = fit_forest(train.x, train.t, train.w, ForestParams{.num_trees = 200},
                                   RngHandle(7));
  for (auto _ : state) {
    Eigen::VectorXd pred = forest.predict(census.x);
    benchmark::DoNotOptimize(pred);
  }
}
BENCHMARK(BM_ForestPredictCensus)->Arg(10000)->Arg(50000);

static void BM_ForestOob(benchmark::State& state) {
  const ForestData data = make_data(921);
  const Forest forest = fit_forest(data.x, data.t, data.w, ForestParams{.num_trees = 200},
                                   RngHandle(7));
  for (auto _ : state) {
    Eigen::VectorXd oob = forest.oob_predictions();
    benchmark::DoNotOptimize(oob);
  }
}
BENCHMARK(BM_ForestOob);

static void BM_ForestValueRefresh(benchmark::State& state) {
  const ForestData data = make_data(921);
  const Forest forest = fit_forest(data.x, data.t, data.w, ForestParams{.num_trees = 200},
                                   RngHandle(7));
  Eigen::VectorXd shifted = data.t.array() + 0.25;
  for (auto _ : state) {
    Forest updated = forest.with_targets(shifted, data.w);
    benchmark::DoNotOptimize(updated);
  }
}
BENCHMARK(BM_ForestValueRefresh);
