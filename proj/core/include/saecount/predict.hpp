#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "saecount/data.hpp"
#include "saecount/ebpp.hpp"
#include "saecount/gmerf.hpp"
#include "saecount/merf.hpp"

namespace saecount {

struct DomainEstimate {
  std::int64_t domain = 0;
  double estimate = 0.0;
  bool in_sample = false;
  std::string method;
  std::int64_t population_size = 0;  // N_i
  std::int64_t sample_size = 0;      // n_i
};

struct DomainEstimates {
  std::vector<DomainEstimate> rows;  // one per population domain, ascending id

  const DomainEstimate& at(std::int64_t domain) const;
};

// Domain-mean aggregation for the log-link estimator: the default applies
// the exponential to the domain-averaged linear predictor; the alternative
// averages unit-level exp(eta) and is exposed for sensitivity runs only.
enum class MeanAggregation { exp_of_mean_eta, mean_of_exp_eta };

// exp((1/N_i) sum_j f(x_ij) + nu_i), nu_i omitted for out-of-sample areas.
DomainEstimates gmerf_domain_means(const GmerfFit& fit, const Population& population,
                                   MeanAggregation aggregation = MeanAggregation::exp_of_mean_eta,
                                   int threads = 1);

// (1/N_i) sum_j f(x_ij) + nu_i on the response scale, clamped at zero with a
// warning when the random effect pushes the mean negative.
DomainEstimates merf_domain_means(const MerfFit& fit, const Population& population,
                                  int threads = 1);

// Vectorized EBPP means: observed y over sampled units plus model
// predictions over non-sampled units.
DomainEstimates ebpp_domain_means(const GlmmFit& fit, const Sample& sample,
                                  const Population& population);

// Direct survey estimator: the domain sample mean of y; NaN for
// out-of-sample domains. Comparison output only.
DomainEstimates direct_means(const Sample& sample, const Population& population);

}  // namespace saecount
