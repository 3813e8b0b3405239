#include "saecount/predict.hpp"

#include <cmath>
#include <limits>

#include "saecount/errors.hpp"
#include "saecount/log.hpp"

namespace saecount {

namespace {

// Overflow guard only: far beyond any plausible count scale, but keeps
// estimates and downstream metrics finite on degenerate linear predictors.
constexpr double kExpCap = 300.0;

double capped_exp(double x) { return std::exp(std::clamp(x, -kExpCap, kExpCap)); }

void check_fit_domains(const std::vector<std::int64_t>& fit_domains, const Population& population) {
  for (std::int64_t id : fit_domains) {
    if (population.domain_size(id) == 0) {
      throw validation_error("fitted domain " + std::to_string(id) + " missing from the census");
    }
  }
}

}  // namespace

const DomainEstimate& DomainEstimates::at(std::int64_t domain) const {
  for (const auto& row : rows) {
    if (row.domain == domain) return row;
  }
  throw validation_error("no estimate for domain " + std::to_string(domain));
}

DomainEstimates gmerf_domain_means(const GmerfFit& fit, const Population& population,
                                   MeanAggregation aggregation, int threads) {
  if (population.p() != fit.forest.num_features()) {
    throw validation_error("census covariate count does not match the fitted forest");
  }
  check_fit_domains(fit.re.domains(), population);
  const Eigen::VectorXd fhat = fit.forest.predict(population.covariates(), threads);

  DomainEstimates out;
  for (std::int64_t id : population.index().ids()) {
    const auto& rows = population.index().rows(id);
    const bool in_sample = fit.sample_sizes.count(id) > 0 && fit.sample_sizes.at(id) > 0;
    const double nu = in_sample ? fit.re.at(id) : 0.0;
    double estimate;
    if (aggregation == MeanAggregation::exp_of_mean_eta) {
      double eta_sum = 0.0;
      for (int r : rows) eta_sum += fhat(r);
      estimate = capped_exp(eta_sum / static_cast<double>(rows.size()) + nu);
    } else {
      double mu_sum = 0.0;
      for (int r : rows) mu_sum += capped_exp(fhat(r) + nu);
      estimate = mu_sum / static_cast<double>(rows.size());
    }
    DomainEstimate row;
    row.domain = id;
    row.estimate = estimate;
    row.in_sample = in_sample;
    row.method = "gmerf";
    row.population_size = static_cast<std::int64_t>(rows.size());
    row.sample_size = in_sample ? fit.sample_sizes.at(id) : 0;
    out.rows.push_back(row);
  }
  return out;
}

DomainEstimates merf_domain_means(const MerfFit& fit, const Population& population, int threads) {
  if (population.p() != fit.forest.num_features()) {
    throw validation_error("census covariate count does not match the fitted forest");
  }
  check_fit_domains(fit.re.domains(), population);
  const Eigen::VectorXd fhat = fit.forest.predict(population.covariates(), threads);

  DomainEstimates out;
  for (std::int64_t id : population.index().ids()) {
    const auto& rows = population.index().rows(id);
    const bool in_sample = fit.sample_sizes.count(id) > 0 && fit.sample_sizes.at(id) > 0;
    const double nu = in_sample ? fit.re.at(id) : 0.0;
    double fsum = 0.0;
    for (int r : rows) fsum += fhat(r);
    double estimate = fsum / static_cast<double>(rows.size()) + nu;
    if (estimate < 0.0) {
      log_event(LogLevel::warn, "merf_mean_clamped", {{"domain", static_cast<long long>(id)},
                                                      {"unclamped", estimate}});
      estimate = 0.0;
    }
    DomainEstimate row;
    row.domain = id;
    row.estimate = estimate;
    row.in_sample = in_sample;
    row.method = "merf";
    row.population_size = static_cast<std::int64_t>(rows.size());
    row.sample_size = in_sample ? fit.sample_sizes.at(id) : 0;
    out.rows.push_back(row);
  }
  return out;
}

DomainEstimates ebpp_domain_means(const GlmmFit& fit, const Sample& sample,
                                  const Population& population) {
  if (population.p() + 1 != static_cast<int>(fit.beta.size())) {
    throw validation_error("census covariate count does not match the fitted GLMM");
  }
  check_fit_domains(fit.re.domains(), population);

  DomainEstimates out;
  for (std::int64_t id : population.index().ids()) {
    DomainEstimate row;
    row.domain = id;
    row.estimate = ebpp_domain_mean(fit, sample, population, id);
    row.in_sample = sample.domain_size(id) > 0;
    row.method = "ebpp";
    row.population_size = population.domain_size(id);
    row.sample_size = sample.domain_size(id);
    out.rows.push_back(row);
  }
  return out;
}

DomainEstimates direct_means(const Sample& sample, const Population& population) {
  DomainEstimates out;
  for (std::int64_t id : population.index().ids()) {
    DomainEstimate row;
    row.domain = id;
    row.in_sample = sample.domain_size(id) > 0;
    row.method = "direct";
    row.population_size = population.domain_size(id);
    row.sample_size = sample.domain_size(id);
    if (row.in_sample) {
      double sum = 0.0;
      for (int r : sample.index().rows(id)) sum += sample.outcomes()[static_cast<std::size_t>(r)];
      row.estimate = sum / static_cast<double>(row.sample_size);
    } else {
      row.estimate = std::numeric_limits<double>::quiet_NaN();
    }
    out.rows.push_back(row);
  }
  return out;
}

}  // namespace saecount
