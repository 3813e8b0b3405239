#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "saecount/bootstrap.hpp"
#include "saecount/data.hpp"
#include "saecount/ebpp.hpp"
#include "saecount/gmerf.hpp"
#include "saecount/merf.hpp"
#include "saecount/predict.hpp"
#include "saecount/rng.hpp"

namespace saecount {

// Model-based generating processes. All four share x1 ~ U(-1,1),
// x2 ~ N(0,1), nu_i ~ N(0, 0.3^2) and mu = exp(eta):
//   normal-poisson:      eta = 2 + x1 + x2 + nu,        y ~ Pois(mu)
//   interaction-poisson: eta = 2 + 2*x1*x2 + x2^2 + nu, y ~ Pois(mu)
//   nb3:                 same eta,                      y ~ NB(mu, 3)
//   nb1:                 same eta,                      y ~ NB(mu, 1)
enum class ScenarioName { normal_poisson, interaction_poisson, nb3, nb1 };

ScenarioName scenario_from_string(const std::string& name);
std::string to_string(ScenarioName name);

struct Scenario {
  ScenarioName name = ScenarioName::normal_poisson;
  int num_domains = 50;
  int units_per_domain = 1000;
  // Per-area sample sizes, assigned to domain ids 1..D in order. Empty:
  // the published 50-area plan (or its 20-area reduction when D = 20).
  std::vector<int> sample_plan;

  std::map<std::int64_t, int> plan_map() const;
};

struct GeneratedPopulation {
  Population population;
  std::vector<double> true_means;  // realized domain means of y, ascending ids
};

GeneratedPopulation generate_population(const Scenario& scenario, RngHandle rng);

// The scenario's linear predictor at a single covariate point.
double scenario_linear_predictor(ScenarioName name, double x1, double x2, double nu);

enum class Method { ebpp, gmerf, merf };
enum class Scheme { gmerf_parametric, gmerf_nonparametric, merf_nonparametric };

Method scheme_method(Scheme scheme);
std::string to_string(Method m);
std::string to_string(Scheme s);
Method method_from_string(const std::string& name);
Scheme scheme_from_string(const std::string& name);

struct SimOptions {
  std::vector<Method> methods{Method::ebpp, Method::gmerf, Method::merf};
  std::vector<Scheme> schemes;       // empty: point estimates only
  int replicates = 50;               // M
  int bootstrap_replicates = 100;    // B
  ForestParams forest{.num_trees = 200};
  double merf_tol = 1e-5;
  int merf_max_iter = 100;
  double gmerf_micro_tol = 1e-5;
  double gmerf_macro_tol = 1e-3;
  int gmerf_max_macro = 30;
  int gmerf_max_micro = 100;
  double ebpp_tol = 1e-6;
  int ebpp_max_iter = 100;
  MeanAggregation aggregation = MeanAggregation::exp_of_mean_eta;
  int threads = 1;  // across replicates; inner fits stay single-threaded
};

// The four evaluation formulas over aligned replicate-by-domain arrays:
//   BIAS_i  = mean_m(est - truth)
//   RMSE_i  = sqrt(mean_m (est - truth)^2)
//   RB-RMSE_i    = (sqrt(mean_m mse_est) - RMSE_i) / RMSE_i
//   RRMSE-RMSE_i = sqrt(mean_m (sqrt(mse_est) - RMSE_i)^2) / RMSE_i
// RB/RRMSE are NaN (missing) when RMSE_i is zero or no mse estimates are
// given.
struct DomainMetrics {
  std::vector<double> bias;
  std::vector<double> rmse;
  std::vector<double> rb_rmse;
  std::vector<double> rrmse_rmse;
};

DomainMetrics compute_metrics(const std::vector<std::vector<double>>& estimates,
                              const std::vector<std::vector<double>>& truths,
                              const std::vector<std::vector<double>>& mse_estimates);

struct SimReport {
  struct PointRow {
    Method method;
    std::int64_t domain;
    bool in_sample;
    double bias;
    double rmse;
  };
  struct UncertaintyRow {
    Scheme scheme;
    std::int64_t domain;
    bool in_sample;
    double rb_rmse;
    double rrmse_rmse;
  };

  std::vector<PointRow> point_rows;
  std::vector<UncertaintyRow> mse_rows;
  int requested_replicates = 0;
  int failed_replicates = 0;

  double median_bias(Method m) const;
  double median_rmse(Method m) const;
  double mean_bias(Method m) const;
  double mean_rmse(Method m) const;
  double median_rb_rmse(Scheme s) const;
  double median_rrmse_rmse(Scheme s) const;
  int out_of_sample_count() const;
};

double median(std::vector<double> values);

// Generates a fresh population each replicate, draws the stratified sample,
// fits the requested methods, optionally runs each bootstrap scheme, and
// aggregates the metrics.
SimReport run_model_based(const Scenario& scenario, const SimOptions& options, RngHandle rng);

// Repeated pseudo-sampling from a fixed census (outcomes required); truths
// are the census domain means. Domains with plan n_i = 0 stay out of
// sample in every replicate.
SimReport run_design_based(const Population& census, const std::map<std::int64_t, int>& plan,
                           const SimOptions& options, RngHandle rng);

}  // namespace saecount
