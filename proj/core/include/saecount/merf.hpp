#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "saecount/data.hpp"
#include "saecount/forest.hpp"
#include "saecount/lmm.hpp"
#include "saecount/rng.hpp"

namespace saecount {

struct MerfParams {
  ForestParams forest;
  double tol = 1e-5;  // relative change of the marginal loglik
  int max_iter = 100;
  // Iterations that re-learn tree structures; later iterations keep the
  // partition and only track leaf values, which lets the alternation reach
  // an exact fixed point.
  int structure_iterations = 3;
};

struct MerfFit {
  Forest forest;  // refit on y - nu at the converged random effects
  VarianceComponents vc;
  RandomEffects re;
  std::vector<double> trace;  // marginal loglik per iteration
  bool converged = false;
  int iterations = 0;
  std::map<std::int64_t, int> sample_sizes;
  std::vector<std::string> covariate_names;
  MerfParams params;
};

// Alternates (a) a forest on the de-biased target y - nu with unit weights,
// (b) out-of-bag predictions, (c) the random-intercept LMM on y with the
// OOB offset, until the marginal loglik stabilizes. The count target is
// treated as continuous throughout (identity link). `init_re` warm-starts
// the random effects.
MerfFit fit_merf(const Sample& sample, const MerfParams& params, RngHandle rng,
                 const RandomEffects* init_re = nullptr);

// f(x) + nu on the response scale; nu = 0 for unseen domains.
double predict_unit_merf(const MerfFit& fit, const Eigen::VectorXd& x, std::int64_t domain);

}  // namespace saecount
