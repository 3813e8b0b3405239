#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "saecount/data.hpp"
#include "saecount/ebpp.hpp"
#include "saecount/gmerf.hpp"
#include "saecount/merf.hpp"
#include "saecount/predict.hpp"
#include "saecount/rng.hpp"

namespace saecount {

// Centers z, then rescales multiplicatively so the empirical (population)
// variance equals target_var exactly. Zero-variance input returns zeros
// with a warning event.
std::vector<double> center_scale_residuals(std::span<const double> z, double target_var);

// Two-level residual decomposition behind the non-parametric schemes:
// marginal residuals (Pearson or raw), per-domain level-2 means, centered
// level-1 residuals rescaled to the bias-corrected variance (denominator
// n - D), and level-2 residuals rescaled to sigma2_nu.
struct ResidualDecomposition {
  std::vector<double> z;                   // unit-level marginal residuals
  std::vector<std::int64_t> domains;       // in-sample domain ids, ascending
  std::vector<double> zbar;                // level-2 residual per domain
  std::vector<double> z1_centered_scaled;
  std::vector<double> z2_centered_scaled;
  double level1_target_var = 0.0;
};

ResidualDecomposition decompose_residuals(const Sample& sample,
                                          std::span<const double> fhat_sample, bool pearson,
                                          double sigma2_nu);

// Nearest-predictor matcher used to assign observed sample outcomes to
// bootstrap units; equidistant ties break toward the lowest sample index.
class NearestMatcher {
 public:
  explicit NearestMatcher(std::span<const double> values);
  int match(double value) const;  // original index into `values`

 private:
  std::vector<std::pair<double, int>> sorted_;  // distinct value -> lowest index
};

struct MseRow {
  std::int64_t domain = 0;
  double mse = 0.0;
  double rmse = 0.0;
  double cv = 0.0;  // rmse / point estimate; NaN when the estimate is <= 0
  bool in_sample = false;
};

struct MseReport {
  std::string scheme;
  int requested_replicates = 0;  // B
  int failures = 0;              // dropped replicates
  // Replicate refits reuse the original hyperparameters and tolerances but
  // halve the iteration caps for throughput; flagged here.
  bool halved_iteration_caps = true;
  std::vector<MseRow> rows;      // one per population domain, ascending
};

struct BootstrapOptions {
  int threads = 1;
  double max_failure_fraction = 0.10;
  MeanAggregation aggregation = MeanAggregation::exp_of_mean_eta;
};

// One synthetic census: outcomes aligned with the population rows plus the
// realized per-domain truths (and, for the parametric scheme, the drawn
// random effects), both in ascending domain order.
struct BootstrapPopulation {
  std::vector<double> y;
  std::vector<double> true_means;
  std::vector<double> nu;  // parametric scheme only
};

BootstrapPopulation make_parametric_bootstrap_population(const GmerfFit& fit,
                                                         const Population& population,
                                                         std::span<const double> fhat_census,
                                                         RngHandle& rng);

BootstrapPopulation make_np_bootstrap_population_gmerf(const Sample& sample,
                                                       const Population& population,
                                                       std::span<const double> fhat_census,
                                                       const ResidualDecomposition& resid,
                                                       const NearestMatcher& matcher,
                                                       RngHandle& rng);

BootstrapPopulation make_np_bootstrap_population_merf(const Sample& sample,
                                                      const Population& population,
                                                      std::span<const double> fhat_census,
                                                      const ResidualDecomposition& resid,
                                                      const NearestMatcher& matcher,
                                                      RngHandle& rng);

// Parametric scheme: redraw nu ~ N(0, sigma2_nu), regenerate a Poisson
// census around exp(f + nu), re-sample with the given plan, refit, and
// average squared deviations from the realized bootstrap truths.
MseReport parametric_bootstrap_gmerf(const GmerfFit& fit, const Population& population,
                                     const std::map<std::int64_t, int>& sample_plan, int B,
                                     RngHandle rng, const BootstrapOptions& options = {});

// Non-parametric scheme for the GMERF: Pearson-residual decomposition,
// resampled residual surfaces, nearest-predictor matching to observed
// counts, then re-sample/refit/re-estimate.
MseReport nonparametric_bootstrap_gmerf(const GmerfFit& fit, const Sample& sample,
                                        const Population& population, int B, RngHandle rng,
                                        const BootstrapOptions& options = {});

// Adjusted non-parametric scheme for the MERF: raw-residual decomposition
// on the response scale with the same matching construction.
MseReport nonparametric_bootstrap_merf(const MerfFit& fit, const Sample& sample,
                                       const Population& population, int B, RngHandle rng,
                                       const BootstrapOptions& options = {});

}  // namespace saecount
