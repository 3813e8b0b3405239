#include "saecount/bootstrap.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "saecount/errors.hpp"
#include "saecount/log.hpp"
#include "saecount/parallel.hpp"

namespace saecount {

namespace {

constexpr double kExpCap = 300.0;  // keeps squared errors representable

double capped_exp(double x) { return std::exp(std::clamp(x, -kExpCap, kExpCap)); }

std::vector<double> domain_means(const Population& population, const std::vector<double>& y) {
  std::vector<double> means;
  means.reserve(static_cast<std::size_t>(population.index().num_domains()));
  for (std::int64_t id : population.index().ids()) {
    const auto& rows = population.index().rows(id);
    double sum = 0.0;
    for (int r : rows) sum += y[static_cast<std::size_t>(r)];
    means.push_back(sum / static_cast<double>(rows.size()));
  }
  return means;
}

// Shared replicate loop: generate -> sample -> refit -> estimate.
MseReport run_scheme(const std::string& scheme, const Population& population,
                     const std::map<std::int64_t, int>& plan, int B,
                     const std::vector<double>& point_estimates, RngHandle rng,
                     const BootstrapOptions& options,
                     const std::function<BootstrapPopulation(RngHandle&)>& make_population,
                     const std::function<std::vector<double>(const Sample&, RngHandle)>& refit_estimate) {
  if (B <= 0) throw validation_error("bootstrap: B must be positive");
  const int d = population.index().num_domains();
  std::vector<std::vector<double>> sq_errors(static_cast<std::size_t>(B));
  std::vector<char> ok(static_cast<std::size_t>(B), 0);

  parallel_for(B, options.threads, [&](int b) {
    RngHandle rng_b = rng.split(static_cast<std::uint64_t>(b));
    try {
      RngHandle pop_rng = rng_b.split(0);
      const BootstrapPopulation boot = make_population(pop_rng);
      Population pop_b(population.domains(), population.covariates(),
                       population.covariate_names(), boot.y);
      RngHandle draw_rng = rng_b.split(1);
      const Sample sample_b = stratified_srswor(draw_rng, pop_b, plan);
      const std::vector<double> est = refit_estimate(sample_b, rng_b.split(2));
      std::vector<double>& sq = sq_errors[static_cast<std::size_t>(b)];
      sq.resize(static_cast<std::size_t>(d));
      for (int k = 0; k < d; ++k) {
        const double e = est[static_cast<std::size_t>(k)] - boot.true_means[static_cast<std::size_t>(k)];
        sq[static_cast<std::size_t>(k)] = e * e;
      }
      ok[static_cast<std::size_t>(b)] = 1;
      log_event(LogLevel::info, "bootstrap_replicate_done", {{"scheme", scheme}, {"replicate", b}});
    } catch (const std::exception& e) {
      log_event(LogLevel::warn, "bootstrap_replicate_failed",
                {{"scheme", scheme}, {"replicate", b}, {"reason", e.what()}});
    }
  });

  int successes = 0;
  std::vector<double> mse(static_cast<std::size_t>(d), 0.0);
  for (int b = 0; b < B; ++b) {
    if (!ok[static_cast<std::size_t>(b)]) continue;
    ++successes;
    for (int k = 0; k < d; ++k) mse[static_cast<std::size_t>(k)] += sq_errors[static_cast<std::size_t>(b)][static_cast<std::size_t>(k)];
  }
  const int failures = B - successes;
  if (failures > options.max_failure_fraction * B) {
    throw validation_error("bootstrap scheme " + scheme + ": " + std::to_string(failures) + " of " +
                           std::to_string(B) + " replicates failed");
  }
  for (auto& v : mse) v /= std::max(1, successes);

  MseReport report;
  report.scheme = scheme;
  report.requested_replicates = B;
  report.failures = failures;
  const auto& ids = population.index().ids();
  for (int k = 0; k < d; ++k) {
    MseRow row;
    row.domain = ids[static_cast<std::size_t>(k)];
    row.mse = mse[static_cast<std::size_t>(k)];
    row.rmse = std::sqrt(row.mse);
    const double point = point_estimates[static_cast<std::size_t>(k)];
    row.cv = point > 0.0 ? row.rmse / point : std::numeric_limits<double>::quiet_NaN();
    auto it = plan.find(row.domain);
    row.in_sample = it != plan.end() && it->second > 0;
    report.rows.push_back(row);
  }
  return report;
}

std::map<std::int64_t, int> plan_from_sample(const Sample& sample) {
  std::map<std::int64_t, int> plan;
  for (std::int64_t id : sample.index().ids()) plan[id] = sample.domain_size(id);
  return plan;
}

GmerfParams halved(GmerfParams params) {
  params.max_macro = std::max(1, params.max_macro / 2);
  params.max_micro = std::max(1, params.max_micro / 2);
  return params;
}

MerfParams halved(MerfParams params) {
  params.max_iter = std::max(1, params.max_iter / 2);
  return params;
}

std::vector<double> estimates_vector(const DomainEstimates& est) {
  std::vector<double> out;
  out.reserve(est.rows.size());
  for (const auto& row : est.rows) out.push_back(row.estimate);
  return out;
}

}  // namespace

std::vector<double> center_scale_residuals(std::span<const double> z, double target_var) {
  if (z.empty()) throw validation_error("center_scale_residuals: empty input");
  if (!(target_var >= 0.0)) throw validation_error("center_scale_residuals: negative target variance");
  const std::size_t n = z.size();
  double mean = 0.0;
  for (double v : z) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : z) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  std::vector<double> out(n, 0.0);
  if (target_var == 0.0) return out;
  if (var <= 0.0) {
    log_event(LogLevel::warn, "center_scale_zero_variance", {{"n", static_cast<long long>(n)}});
    return out;
  }
  const double scale = std::sqrt(target_var / var);
  for (std::size_t i = 0; i < n; ++i) out[i] = (z[i] - mean) * scale;
  return out;
}

ResidualDecomposition decompose_residuals(const Sample& sample,
                                          std::span<const double> fhat_sample, bool pearson,
                                          double sigma2_nu) {
  const int n = sample.n();
  if (static_cast<int>(fhat_sample.size()) != n) {
    throw validation_error("decompose_residuals: prediction length mismatch");
  }
  ResidualDecomposition out;
  out.z.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double y = sample.outcomes()[static_cast<std::size_t>(i)];
    if (pearson) {
      const double mu = capped_exp(fhat_sample[static_cast<std::size_t>(i)]);
      out.z[static_cast<std::size_t>(i)] = (y - mu) / std::sqrt(mu);
    } else {
      out.z[static_cast<std::size_t>(i)] = y - fhat_sample[static_cast<std::size_t>(i)];
    }
  }

  out.domains = sample.index().ids();
  const int d = static_cast<int>(out.domains.size());
  out.zbar.resize(static_cast<std::size_t>(d));
  std::vector<double> level1(static_cast<std::size_t>(n));
  for (int k = 0; k < d; ++k) {
    const auto& rows = sample.index().rows(out.domains[static_cast<std::size_t>(k)]);
    double sum = 0.0;
    for (int r : rows) sum += out.z[static_cast<std::size_t>(r)];
    const double zb = sum / static_cast<double>(rows.size());
    out.zbar[static_cast<std::size_t>(k)] = zb;
    for (int r : rows) level1[static_cast<std::size_t>(r)] = out.z[static_cast<std::size_t>(r)] - zb;
  }

  // Bias-corrected level-1 variance: sum of squares over n - D degrees of
  // freedom (the domain means absorb D of them).
  double ss = 0.0;
  for (double v : level1) ss += v * v;
  const int df = std::max(1, n - d);
  out.level1_target_var = ss / static_cast<double>(df);
  out.z1_centered_scaled = center_scale_residuals(level1, out.level1_target_var);
  out.z2_centered_scaled = center_scale_residuals(out.zbar, sigma2_nu);
  return out;
}

NearestMatcher::NearestMatcher(std::span<const double> values) {
  if (values.empty()) throw validation_error("NearestMatcher: empty predictor set");
  std::vector<std::pair<double, int>> pairs;
  pairs.reserve(values.size());
  for (int i = 0; i < static_cast<int>(values.size()); ++i) {
    if (!std::isfinite(values[static_cast<std::size_t>(i)])) {
      throw validation_error("NearestMatcher: non-finite predictor");
    }
    pairs.emplace_back(values[static_cast<std::size_t>(i)], i);
  }
  std::sort(pairs.begin(), pairs.end());
  // Distinct values, each carrying the lowest original index.
  sorted_.reserve(pairs.size());
  for (const auto& pr : pairs) {
    if (sorted_.empty() || sorted_.back().first != pr.first) sorted_.push_back(pr);
  }
}

int NearestMatcher::match(double value) const {
  const auto it = std::lower_bound(
      sorted_.begin(), sorted_.end(), value,
      [](const std::pair<double, int>& a, double v) { return a.first < v; });
  if (it == sorted_.begin()) return it->second;
  if (it == sorted_.end()) return std::prev(it)->second;
  const auto lo = std::prev(it);
  const double d_lo = value - lo->first;
  const double d_hi = it->first - value;
  if (d_lo < d_hi) return lo->second;
  if (d_hi < d_lo) return it->second;
  return std::min(lo->second, it->second);
}

BootstrapPopulation make_parametric_bootstrap_population(const GmerfFit& fit,
                                                         const Population& population,
                                                         std::span<const double> fhat_census,
                                                         RngHandle& rng) {
  const int n = population.n();
  if (static_cast<int>(fhat_census.size()) != n) {
    throw validation_error("parametric bootstrap: census prediction length mismatch");
  }
  const double sd = std::sqrt(std::max(0.0, fit.vc.sigma2_nu));
  BootstrapPopulation out;
  out.y.resize(static_cast<std::size_t>(n));
  const auto& ids = population.index().ids();
  out.nu.reserve(ids.size());
  for (std::size_t k = 0; k < ids.size(); ++k) {
    out.nu.push_back(sample_normal(rng, 0.0, sd));
  }
  for (std::size_t k = 0; k < ids.size(); ++k) {
    const auto& rows = population.index().rows(ids[k]);
    for (int r : rows) {
      const double mu = capped_exp(fhat_census[static_cast<std::size_t>(r)] + out.nu[k]);
      out.y[static_cast<std::size_t>(r)] = sample_poisson_real(rng, mu);
    }
  }
  out.true_means = domain_means(population, out.y);
  return out;
}

BootstrapPopulation make_np_bootstrap_population_gmerf(const Sample& sample,
                                                       const Population& population,
                                                       std::span<const double> fhat_census,
                                                       const ResidualDecomposition& resid,
                                                       const NearestMatcher& matcher,
                                                       RngHandle& rng) {
  const int n = population.n();
  const auto& ids = population.index().ids();
  const std::vector<double> z1 = srswr(rng, resid.z1_centered_scaled, n);
  const std::vector<double> z2 =
      srswr(rng, resid.z2_centered_scaled, static_cast<int>(ids.size()));

  BootstrapPopulation out;
  out.y.resize(static_cast<std::size_t>(n));
  for (std::size_t k = 0; k < ids.size(); ++k) {
    for (int r : population.index().rows(ids[k])) {
      const double mu_b = capped_exp(fhat_census[static_cast<std::size_t>(r)] + z2[k]);
      const double y_tilde = mu_b + std::sqrt(mu_b) * z1[static_cast<std::size_t>(r)];
      const int t = matcher.match(y_tilde);
      out.y[static_cast<std::size_t>(r)] = sample.outcomes()[static_cast<std::size_t>(t)];
    }
  }
  out.true_means = domain_means(population, out.y);
  return out;
}

BootstrapPopulation make_np_bootstrap_population_merf(const Sample& sample,
                                                      const Population& population,
                                                      std::span<const double> fhat_census,
                                                      const ResidualDecomposition& resid,
                                                      const NearestMatcher& matcher,
                                                      RngHandle& rng) {
  const int n = population.n();
  const auto& ids = population.index().ids();
  const std::vector<double> z1 = srswr(rng, resid.z1_centered_scaled, n);
  const std::vector<double> z2 =
      srswr(rng, resid.z2_centered_scaled, static_cast<int>(ids.size()));

  BootstrapPopulation out;
  out.y.resize(static_cast<std::size_t>(n));
  for (std::size_t k = 0; k < ids.size(); ++k) {
    for (int r : population.index().rows(ids[k])) {
      const double eta_b =
          fhat_census[static_cast<std::size_t>(r)] + z2[k] + z1[static_cast<std::size_t>(r)];
      const int t = matcher.match(eta_b);
      out.y[static_cast<std::size_t>(r)] = sample.outcomes()[static_cast<std::size_t>(t)];
    }
  }
  out.true_means = domain_means(population, out.y);
  return out;
}

MseReport parametric_bootstrap_gmerf(const GmerfFit& fit, const Population& population,
                                     const std::map<std::int64_t, int>& sample_plan, int B,
                                     RngHandle rng, const BootstrapOptions& options) {
  const Eigen::VectorXd fhat = fit.forest.predict(population.covariates(), options.threads);
  const std::vector<double> points =
      estimates_vector(gmerf_domain_means(fit, population, options.aggregation, options.threads));
  const GmerfParams refit_params = halved(fit.params);
  std::span<const double> fhat_span(fhat.data(), static_cast<std::size_t>(fhat.size()));

  return run_scheme(
      "parametric-gmerf", population, sample_plan, B, points, rng, options,
      [&](RngHandle& r) { return make_parametric_bootstrap_population(fit, population, fhat_span, r); },
      [&](const Sample& sample_b, RngHandle refit_rng) {
        const GmerfFit refit = fit_gmerf(sample_b, refit_params, refit_rng);
        return estimates_vector(gmerf_domain_means(refit, population, options.aggregation, 1));
      });
}

MseReport nonparametric_bootstrap_gmerf(const GmerfFit& fit, const Sample& sample,
                                        const Population& population, int B, RngHandle rng,
                                        const BootstrapOptions& options) {
  const Eigen::VectorXd fhat_census = fit.forest.predict(population.covariates(), options.threads);
  const Eigen::VectorXd fhat_sample = fit.forest.predict(sample.covariates(), options.threads);
  const ResidualDecomposition resid = decompose_residuals(
      sample, std::span<const double>(fhat_sample.data(), static_cast<std::size_t>(fhat_sample.size())),
      /*pearson=*/true, fit.vc.sigma2_nu);

  // Unit-level sample predictors on the response scale: exp(f + nu).
  std::vector<double> predictors(static_cast<std::size_t>(sample.n()));
  for (int i = 0; i < sample.n(); ++i) {
    predictors[static_cast<std::size_t>(i)] =
        capped_exp(fhat_sample(i) + fit.re.at(sample.domains()[static_cast<std::size_t>(i)]));
  }
  const NearestMatcher matcher(predictors);
  const std::vector<double> points =
      estimates_vector(gmerf_domain_means(fit, population, options.aggregation, options.threads));
  const GmerfParams refit_params = halved(fit.params);
  std::span<const double> census_span(fhat_census.data(), static_cast<std::size_t>(fhat_census.size()));

  return run_scheme(
      "nonparametric-gmerf", population, plan_from_sample(sample), B, points, rng, options,
      [&](RngHandle& r) {
        return make_np_bootstrap_population_gmerf(sample, population, census_span, resid, matcher, r);
      },
      [&](const Sample& sample_b, RngHandle refit_rng) {
        const GmerfFit refit = fit_gmerf(sample_b, refit_params, refit_rng);
        return estimates_vector(gmerf_domain_means(refit, population, options.aggregation, 1));
      });
}

MseReport nonparametric_bootstrap_merf(const MerfFit& fit, const Sample& sample,
                                       const Population& population, int B, RngHandle rng,
                                       const BootstrapOptions& options) {
  const Eigen::VectorXd fhat_census = fit.forest.predict(population.covariates(), options.threads);
  const Eigen::VectorXd fhat_sample = fit.forest.predict(sample.covariates(), options.threads);
  const ResidualDecomposition resid = decompose_residuals(
      sample, std::span<const double>(fhat_sample.data(), static_cast<std::size_t>(fhat_sample.size())),
      /*pearson=*/false, fit.vc.sigma2_nu);

  // Unit-level sample predictors on the linear (response) scale: f + nu.
  std::vector<double> predictors(static_cast<std::size_t>(sample.n()));
  for (int i = 0; i < sample.n(); ++i) {
    predictors[static_cast<std::size_t>(i)] =
        fhat_sample(i) + fit.re.at(sample.domains()[static_cast<std::size_t>(i)]);
  }
  const NearestMatcher matcher(predictors);
  const std::vector<double> points = estimates_vector(merf_domain_means(fit, population, options.threads));
  const MerfParams refit_params = halved(fit.params);
  std::span<const double> census_span(fhat_census.data(), static_cast<std::size_t>(fhat_census.size()));

  return run_scheme(
      "nonparametric-merf", population, plan_from_sample(sample), B, points, rng, options,
      [&](RngHandle& r) {
        return make_np_bootstrap_population_merf(sample, population, census_span, resid, matcher, r);
      },
      [&](const Sample& sample_b, RngHandle refit_rng) {
        const MerfFit refit = fit_merf(sample_b, refit_params, refit_rng);
        return estimates_vector(merf_domain_means(refit, population, 1));
      });
}

}  // namespace saecount
