#pragma once

#include <Eigen/Dense>
#include <vector>

#include "saecount/data.hpp"

namespace saecount {

struct GlmFit {
  Eigen::VectorXd beta;  // intercept first
  double loglik = 0.0;
  bool converged = false;
  int iterations = 0;
};

// Poisson regression with log link by iteratively reweighted least squares.
// `x` carries the covariates without an intercept column; one is prepended.
GlmFit fit_poisson_glm(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double tol = 1e-10,
                       int max_iter = 50);

double poisson_glm_loglik(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                          const Eigen::VectorXd& beta);

// Forward stepwise covariate selection by AIC on the Poisson GLM (random
// effects ignored during the search). Returns the selected column indices
// in selection order.
std::vector<int> select_covariates_aic(const Sample& sample);

}  // namespace saecount
