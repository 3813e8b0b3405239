#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "saecount/data.hpp"
#include "saecount/lmm.hpp"

namespace saecount {

struct GlmmFit {
  Eigen::VectorXd beta;  // intercept first, then the covariates
  VarianceComponents vc;
  RandomEffects re;
  bool converged = false;
  int iterations = 0;
  std::map<std::int64_t, int> sample_sizes;
  std::vector<std::string> covariate_names;  // without the intercept
};

// Poisson GLMM with a domain random intercept, fit by penalized
// quasi-likelihood: each iteration rebuilds the linearized target and
// weights, re-estimates the variance components on the current fixed part,
// updates beta by weighted GLS under the random-intercept covariance
// (rank-one Woodbury per domain), and refreshes the BLUPs. Stops when the
// largest relative parameter change drops below `tol`. The design matrix
// (intercept + covariates) must have full rank; collinear columns are named
// in the error.
GlmmFit fit_poisson_glmm_pql(const Sample& sample, double tol = 1e-6, int max_iter = 100);

// Conditional mean exp(x'beta + nu_domain); nu = 0 for unseen domains.
double glmm_unit_mean(const GlmmFit& fit, const Eigen::VectorXd& x, std::int64_t domain);

// The EBPP area mean: observed outcomes summed over sampled units plus
// model predictions summed over non-sampled units, divided by N_i. The
// non-sampled total is computed as (census prediction total) minus (sample
// prediction total), which equals the sum over r_i exactly when the sample
// is a subset of the census.
double ebpp_domain_mean(const GlmmFit& fit, const Sample& sample, const Population& population,
                        std::int64_t domain);

}  // namespace saecount
