#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "saecount/data.hpp"
#include "saecount/forest.hpp"
#include "saecount/lmm.hpp"
#include "saecount/rng.hpp"

namespace saecount {

// Linearized pseudo-model state for the Poisson/log-link specialization:
// mu = exp(eta), y_L = log(mu) + (y - mu)/mu, w = mu.
struct WorkingState {
  Eigen::VectorXd eta;
  Eigen::VectorXd mu;
  Eigen::VectorXd y_l;
  Eigen::VectorXd w;
};

// eta is clamped to [-30, 30] before exponentiation (clamp events are
// logged) and mu is floored at 1e-8 inside y_L and w.
WorkingState poisson_working_update(std::span<const double> y, const Eigen::VectorXd& eta);

// Fitted linear predictors of a Poisson GLM (log link, no random effects);
// falls back to the constant log(mean(y) + 0.5) when IRLS diverges.
Eigen::VectorXd init_glm_poisson(const Sample& sample);

struct GmerfParams {
  ForestParams forest;
  double micro_tol = 1e-5;
  double macro_tol = 1e-3;
  int max_macro = 30;
  int max_micro = 100;
  // Macro passes that re-learn tree structures; later passes only track
  // leaf values over the frozen partition so the eta monitor can meet its
  // tolerance instead of chasing split-flip noise.
  int structure_macros = 3;
};

// Estimates the fixed part on the weighted pseudo-data and returns the
// in-sample offset used by the random-effects step (out-of-bag predictions
// for forests). Called once per micro-iteration.
using FixedPartFitter = std::function<Eigen::VectorXd(
    const Eigen::VectorXd& adjusted_target, const Eigen::VectorXd& weights, int macro_iter,
    int micro_iter)>;

struct PqlLoopResult {
  Eigen::VectorXd eta;
  Eigen::VectorXd last_offset;
  double mean = 0.0;  // pseudo-model location absorbed alongside the offset
  VarianceComponents vc;
  RandomEffects re;
  std::vector<double> macro_changes;              // relative eta change per macro
  std::vector<std::vector<double>> micro_logliks; // pseudo-model loglik trace per macro
  bool macro_converged = false;
  std::vector<bool> micro_converged;
  int macro_iterations = 0;
};

// The doubly iterative PQL/EM driver: macro iterations refresh the
// linearized target and weights, micro iterations alternate the fixed-part
// fitter with the weighted random-intercept LMM until the pseudo-model
// log-likelihood stabilizes. Exposed so the fixed part can be swapped (the
// GLMM special case uses a linear fit here).
PqlLoopResult run_pql_loop(std::span<const double> y, std::span<const std::int64_t> domains,
                           const Eigen::VectorXd& eta0, const FixedPartFitter& fitter,
                           double micro_tol, double macro_tol, int max_macro, int max_micro);

struct GmerfFit {
  Forest forest;  // in-bag refit at the converged random effects
  VarianceComponents vc;
  RandomEffects re;
  std::vector<double> macro_changes;
  std::vector<std::vector<double>> micro_logliks;
  bool macro_converged = false;
  std::vector<bool> micro_converged;
  int macro_iterations = 0;
  std::map<std::int64_t, int> sample_sizes;  // n_i of the fitting sample
  std::vector<std::string> covariate_names;
  GmerfParams params;
};

GmerfFit fit_gmerf(const Sample& sample, const GmerfParams& params, RngHandle rng);

// Unit-level prediction on both scales: eta = f(x) + nu (0 for unseen
// domains), mu = exp(eta).
std::pair<double, double> predict_unit_gmerf(const GmerfFit& fit, const Eigen::VectorXd& x,
                                             std::int64_t domain);

}  // namespace saecount
