#pragma once

#include <span>
#include <utility>
#include <vector>

namespace saecount {

// (y - mu) / sqrt(mu), elementwise; mu must be strictly positive.
std::vector<double> pearson_residuals(std::span<const double> y, std::span<const double> mu_hat);

// Sum of squared Pearson residuals over the residual degrees of freedom.
double dispersion_ratio(std::span<const double> pearson, int df);

// Dean's P_B overdispersion score test:
//   T = sum[(y - mu)^2 - y] / sqrt(2 sum mu^2),
// one-sided p-value from the standard normal upper tail.
std::pair<double, double> dean_pb_test(std::span<const double> y, std::span<const double> mu_hat);

struct DispersionSummary {
  std::vector<double> pearson;
  double ratio = 0.0;
  double dean_statistic = 0.0;
  double dean_p_value = 1.0;
  int residual_df = 0;
};

// Convenience bundle; df follows the GLMM approximation
// n - (p + 1) - (number of in-sample domains).
DispersionSummary dispersion_summary(std::span<const double> y, std::span<const double> mu_hat,
                                     int n_covariates, int n_domains);

}  // namespace saecount
