#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace saecount {

struct VarianceComponents {
  double sigma2_nu = 0.0;   // random-intercept variance
  double sigma2_eps = 0.0;  // level-1 variance on the working scale
};

// Predicted random intercepts; zero for domains absent from the data.
class RandomEffects {
 public:
  RandomEffects() = default;
  RandomEffects(std::vector<std::int64_t> domains, std::vector<double> nu);

  double at(std::int64_t domain) const;  // 0 for unseen domains
  const std::vector<std::int64_t>& domains() const { return domains_; }
  const std::vector<double>& values() const { return nu_; }

 private:
  std::vector<std::int64_t> domains_;  // ascending
  std::vector<double> nu_;
  std::unordered_map<std::int64_t, int> pos_;
};

struct LmmFit {
  VarianceComponents vc;
  RandomEffects re;
  double loglik = 0.0;
  bool converged = false;
};

// Maximizes the marginal Gaussian likelihood of r = target - offset under
// r_ij = nu_i + e_ij, e_ij ~ N(0, sigma2_eps / w_ij), nu_i ~ N(0, sigma2_nu),
// by 2-parameter ML on the log variances (Nelder-Mead with a profiled
// golden-section fallback). Random effects are the precision-weighted BLUPs
//   nu_i = (sum_j w_ij r_ij / s_eps) / (1/s_nu + sum_j w_ij / s_eps).
// A variance pinned at the 1e-12 floor is reported as exactly 0.
LmmFit fit_intercept_lmm(std::span<const double> target, std::span<const double> offset,
                         std::span<const double> weights,
                         std::span<const std::int64_t> domains);

double blup_predict(const VarianceComponents& vc, const RandomEffects& re, std::int64_t domain);

struct LmmMeanFit {
  double mean = 0.0;  // profiled GLS intercept of the residuals
  VarianceComponents vc;
  RandomEffects re;
  double loglik = 0.0;
  bool converged = false;
};

// Same random-intercept model with a free location parameter:
//   r_ij = mean + nu_i + e_ij.
// The mean is profiled out by weighted GLS inside the ML search. Used by
// the weighted pseudo-model iterations, where a location left in the
// residuals would otherwise leak into every random effect.
LmmMeanFit fit_intercept_lmm_with_mean(std::span<const double> target,
                                       std::span<const double> offset,
                                       std::span<const double> weights,
                                       std::span<const std::int64_t> domains);

// Exact marginal log-likelihood under the random-intercept covariance,
// evaluated per domain through rank-one Woodbury identities. sigma2_eps = 0
// with nonzero residuals is a singular covariance and throws.
double marginal_loglik(const VarianceComponents& vc, std::span<const double> target,
                       std::span<const double> offset, std::span<const double> weights,
                       std::span<const std::int64_t> domains);

}  // namespace saecount
