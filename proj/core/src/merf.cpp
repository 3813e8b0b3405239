#include "saecount/merf.hpp"

#include <cmath>

#include "saecount/errors.hpp"
#include "saecount/log.hpp"

namespace saecount {

MerfFit fit_merf(const Sample& sample, const MerfParams& params, RngHandle rng,
                 const RandomEffects* init_re) {
  const int n = sample.n();
  if (n == 0) throw validation_error("fit_merf: empty sample");

  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) y(i) = sample.outcomes()[static_cast<std::size_t>(i)];
  const Eigen::VectorXd unit_w = Eigen::VectorXd::Ones(n);
  std::span<const double> y_span(y.data(), static_cast<std::size_t>(n));
  std::span<const std::int64_t> domains(sample.domains().data(), static_cast<std::size_t>(n));

  std::vector<double> nu_by_row(static_cast<std::size_t>(n), 0.0);
  if (init_re != nullptr) {
    for (int i = 0; i < n; ++i) {
      nu_by_row[static_cast<std::size_t>(i)] = init_re->at(sample.domains()[static_cast<std::size_t>(i)]);
    }
  }

  MerfFit fit;
  fit.params = params;
  double prev_ll = 0.0;

  // One forest stream for every refit: the alternation is then a
  // deterministic map whose fixed point the loglik monitor can reach.
  // Fresh streams per iteration would leave bootstrap-bag jitter in the
  // monitored likelihood and stall convergence above the tolerance.
  const RngHandle forest_rng = rng.split(0xF07E57u);

  Forest forest;
  for (int iter = 0; iter < params.max_iter; ++iter) {
    Eigen::VectorXd adjusted(n);
    for (int i = 0; i < n; ++i) adjusted(i) = y(i) - nu_by_row[static_cast<std::size_t>(i)];
    if (iter < std::max(1, params.structure_iterations)) {
      forest = fit_forest(sample.covariates(), adjusted, unit_w, params.forest, forest_rng);
    } else {
      forest = forest.with_targets(adjusted, unit_w);
    }
    const Eigen::VectorXd oob = forest.oob_predictions();

    const LmmFit lmm = fit_intercept_lmm(
        y_span, std::span<const double>(oob.data(), static_cast<std::size_t>(n)),
        std::span<const double>(unit_w.data(), static_cast<std::size_t>(n)), domains);
    fit.vc = lmm.vc;
    fit.re = lmm.re;
    for (int i = 0; i < n; ++i) {
      nu_by_row[static_cast<std::size_t>(i)] = lmm.re.at(sample.domains()[static_cast<std::size_t>(i)]);
    }
    fit.trace.push_back(lmm.loglik);
    fit.iterations = iter + 1;
    if (iter > 0) {
      const double rel = std::fabs(lmm.loglik - prev_ll) / std::max(std::fabs(prev_ll), 1e-12);
      if (rel < params.tol) {
        fit.converged = true;
        prev_ll = lmm.loglik;
        break;
      }
    }
    prev_ll = lmm.loglik;
  }
  if (!fit.converged) {
    log_event(LogLevel::warn, "merf_not_converged", {{"iterations", fit.iterations}});
  }

  // Final forest refit at the converged random effects.
  Eigen::VectorXd adjusted(n);
  for (int i = 0; i < n; ++i) adjusted(i) = y(i) - nu_by_row[static_cast<std::size_t>(i)];
  fit.forest = fit_forest(sample.covariates(), adjusted, unit_w, params.forest, forest_rng);

  for (std::int64_t id : sample.index().ids()) fit.sample_sizes[id] = sample.domain_size(id);
  fit.covariate_names = sample.covariate_names();
  return fit;
}

double predict_unit_merf(const MerfFit& fit, const Eigen::VectorXd& x, std::int64_t domain) {
  return fit.forest.predict_row(x) + fit.re.at(domain);
}

}  // namespace saecount
