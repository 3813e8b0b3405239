#include "saecount/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "saecount/errors.hpp"

namespace saecount {

std::vector<double> pearson_residuals(std::span<const double> y, std::span<const double> mu_hat) {
  if (y.size() != mu_hat.size()) throw validation_error("pearson_residuals: length mismatch");
  std::vector<double> out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!(mu_hat[i] > 0.0)) {
      throw validation_error("pearson_residuals: fitted mean must be positive (unit " +
                             std::to_string(i + 1) + ")");
    }
    out[i] = (y[i] - mu_hat[i]) / std::sqrt(mu_hat[i]);
  }
  return out;
}

double dispersion_ratio(std::span<const double> pearson, int df) {
  if (df <= 0) throw validation_error("dispersion_ratio: df must be positive");
  double ss = 0.0;
  for (double r : pearson) ss += r * r;
  return ss / static_cast<double>(df);
}

std::pair<double, double> dean_pb_test(std::span<const double> y, std::span<const double> mu_hat) {
  if (y.empty()) throw validation_error("dean_pb_test: empty input");
  if (y.size() != mu_hat.size()) throw validation_error("dean_pb_test: length mismatch");
  // Terms are sorted before summation so the statistic is exactly invariant
  // to unit relabeling.
  std::vector<double> num_terms(y.size()), denom_terms(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!(mu_hat[i] > 0.0)) throw validation_error("dean_pb_test: fitted mean must be positive");
    const double d = y[i] - mu_hat[i];
    num_terms[i] = d * d - y[i];
    denom_terms[i] = mu_hat[i] * mu_hat[i];
  }
  std::sort(num_terms.begin(), num_terms.end());
  std::sort(denom_terms.begin(), denom_terms.end());
  double num = 0.0, denom = 0.0;
  for (double v : num_terms) num += v;
  for (double v : denom_terms) denom += v;
  const double stat = num / std::sqrt(2.0 * denom);
  const double p = 0.5 * std::erfc(stat / std::sqrt(2.0));  // upper tail
  return {stat, p};
}

DispersionSummary dispersion_summary(std::span<const double> y, std::span<const double> mu_hat,
                                     int n_covariates, int n_domains) {
  DispersionSummary s;
  s.pearson = pearson_residuals(y, mu_hat);
  s.residual_df = static_cast<int>(y.size()) - (n_covariates + 1) - n_domains;
  if (s.residual_df <= 0) throw validation_error("dispersion_summary: nonpositive residual df");
  s.ratio = dispersion_ratio(s.pearson, s.residual_df);
  const auto [stat, p] = dean_pb_test(y, mu_hat);
  s.dean_statistic = stat;
  s.dean_p_value = p;
  return s;
}

}  // namespace saecount
