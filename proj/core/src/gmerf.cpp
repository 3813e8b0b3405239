#include "saecount/gmerf.hpp"

#include <cmath>

#include "saecount/errors.hpp"
#include "saecount/glm.hpp"
#include "saecount/log.hpp"

namespace saecount {

namespace {

constexpr double kEtaCap = 30.0;
constexpr double kMuFloor = 1e-8;

}  // namespace

WorkingState poisson_working_update(std::span<const double> y, const Eigen::VectorXd& eta) {
  const int n = static_cast<int>(y.size());
  if (eta.size() != n) throw validation_error("poisson_working_update: length mismatch");
  WorkingState ws;
  ws.eta.resize(n);
  ws.mu.resize(n);
  ws.y_l.resize(n);
  ws.w.resize(n);
  int clamped = 0;
  for (int i = 0; i < n; ++i) {
    double e = eta(i);
    if (!std::isfinite(e)) throw validation_error("poisson_working_update: non-finite eta");
    if (e > kEtaCap || e < -kEtaCap) {
      e = std::clamp(e, -kEtaCap, kEtaCap);
      ++clamped;
    }
    ws.eta(i) = e;
    double mu = std::exp(e);
    if (mu < kMuFloor) mu = kMuFloor;
    ws.mu(i) = mu;
    ws.y_l(i) = std::log(mu) + (y[static_cast<std::size_t>(i)] - mu) / mu;
    ws.w(i) = mu;  // w = 1/v(mu) with v(mu) = 1/mu under the log link
  }
  if (clamped > 0) {
    log_event(LogLevel::warn, "eta_clamped", {{"count", clamped}});
  }
  return ws;
}

Eigen::VectorXd init_glm_poisson(const Sample& sample) {
  if (sample.n() == 0) throw validation_error("init_glm_poisson: empty sample");
  Eigen::VectorXd y(sample.n());
  for (int i = 0; i < sample.n(); ++i) y(i) = sample.outcomes()[static_cast<std::size_t>(i)];
  if (y.maxCoeff() <= 0.0) {
    // All-zero outcomes pin IRLS at the eta floor; use the flat fallback.
    const double eta0 = std::log(0.5);
    log_event(LogLevel::warn, "glm_init_fallback", {{"eta0", eta0}});
    return Eigen::VectorXd::Constant(sample.n(), eta0);
  }
  const GlmFit glm = fit_poisson_glm(sample.covariates(), y);
  if (!glm.converged || !glm.beta.allFinite()) {
    const double eta0 = std::log(y.mean() + 0.5);
    log_event(LogLevel::warn, "glm_init_fallback", {{"eta0", eta0}});
    return Eigen::VectorXd::Constant(sample.n(), eta0);
  }
  Eigen::MatrixXd m(sample.n(), sample.p() + 1);
  m.col(0).setOnes();
  m.rightCols(sample.p()) = sample.covariates();
  return m * glm.beta;
}

PqlLoopResult run_pql_loop(std::span<const double> y, std::span<const std::int64_t> domains,
                           const Eigen::VectorXd& eta0, const FixedPartFitter& fitter,
                           double micro_tol, double macro_tol, int max_macro, int max_micro) {
  const int n = static_cast<int>(y.size());
  if (eta0.size() != n || static_cast<int>(domains.size()) != n) {
    throw validation_error("run_pql_loop: length mismatch");
  }

  PqlLoopResult res;
  res.eta = eta0;
  std::vector<double> nu_by_row(static_cast<std::size_t>(n), 0.0);

  for (int macro = 0; macro < max_macro; ++macro) {
    const WorkingState ws = poisson_working_update(y, res.eta);
    std::vector<double> trace;
    bool micro_ok = false;
    double prev_ll = 0.0;
    Eigen::VectorXd offset = Eigen::VectorXd::Zero(n);

    for (int micro = 0; micro < max_micro; ++micro) {
      Eigen::VectorXd adjusted(n);
      for (int i = 0; i < n; ++i) adjusted(i) = ws.y_l(i) - nu_by_row[static_cast<std::size_t>(i)];
      offset = fitter(adjusted, ws.w, macro, micro);
      if (offset.size() != n) throw validation_error("fixed-part fitter returned a wrong length");

      // The free location keeps the weighted fixed-part fit and the
      // random-effect decomposition on a common center; without it the gap
      // between weighted and unweighted means re-enters every nu and the
      // variance estimate drifts upward across iterations.
      const LmmMeanFit lmm = fit_intercept_lmm_with_mean(
          std::span<const double>(ws.y_l.data(), static_cast<std::size_t>(n)),
          std::span<const double>(offset.data(), static_cast<std::size_t>(n)),
          std::span<const double>(ws.w.data(), static_cast<std::size_t>(n)), domains);
      res.vc = lmm.vc;
      res.re = lmm.re;
      res.mean = lmm.mean;
      for (int i = 0; i < n; ++i) {
        nu_by_row[static_cast<std::size_t>(i)] = lmm.re.at(domains[static_cast<std::size_t>(i)]);
      }
      trace.push_back(lmm.loglik);
      if (micro > 0) {
        const double rel = std::fabs(lmm.loglik - prev_ll) /
                           std::max(std::fabs(prev_ll), 1e-12);
        if (rel < micro_tol) {
          micro_ok = true;
          prev_ll = lmm.loglik;
          break;
        }
      }
      prev_ll = lmm.loglik;
    }

    res.micro_logliks.push_back(std::move(trace));
    res.micro_converged.push_back(micro_ok);
    res.macro_iterations = macro + 1;

    Eigen::VectorXd eta_new(n);
    for (int i = 0; i < n; ++i) {
      eta_new(i) = offset(i) + res.mean + nu_by_row[static_cast<std::size_t>(i)];
    }
    double change = 0.0;
    for (int i = 0; i < n; ++i) {
      change = std::max(change, std::fabs(eta_new(i) - res.eta(i)) / (std::fabs(res.eta(i)) + 1.0));
    }
    res.macro_changes.push_back(change);
    res.eta = eta_new;
    res.last_offset = offset;
    if (change < macro_tol) {
      res.macro_converged = true;
      break;
    }
  }
  return res;
}

GmerfFit fit_gmerf(const Sample& sample, const GmerfParams& params, RngHandle rng) {
  if (sample.n() == 0) throw validation_error("fit_gmerf: empty sample");
  const int n = sample.n();
  Eigen::VectorXd eta0 = init_glm_poisson(sample);

  ForestParams fp = params.forest;
  // A single forest stream across all micro/macro refits keeps the
  // alternation deterministic, so the loglik and eta monitors converge
  // instead of chasing bootstrap-bag jitter. Structures are re-learned for
  // the first `structure_macros` passes, then frozen with leaf values
  // tracking the moving pseudo-target.
  const RngHandle forest_rng = rng.split(0xF07E57u);
  Forest structure;
  auto fitter = [&](const Eigen::VectorXd& adjusted, const Eigen::VectorXd& w, int macro,
                    int micro) -> Eigen::VectorXd {
    const bool learn_structure =
        macro < std::max(1, params.structure_macros) && micro == 0;
    if (learn_structure || structure.num_trees() == 0) {
      structure = fit_forest(sample.covariates(), adjusted, w, fp, forest_rng);
    } else {
      structure = structure.with_targets(adjusted, w);
    }
    return structure.oob_predictions();
  };

  std::span<const double> y(sample.outcomes().data(), static_cast<std::size_t>(n));
  std::span<const std::int64_t> domains(sample.domains().data(), static_cast<std::size_t>(n));
  PqlLoopResult loop = run_pql_loop(y, domains, eta0, fitter, params.micro_tol, params.macro_tol,
                                    params.max_macro, params.max_micro);
  if (!loop.macro_converged) {
    log_event(LogLevel::warn, "gmerf_macro_not_converged",
              {{"macro_iterations", loop.macro_iterations}});
  }

  // In-bag refit at the converged random effects, used for census prediction.
  const WorkingState ws = poisson_working_update(y, loop.eta);
  Eigen::VectorXd adjusted(n);
  for (int i = 0; i < n; ++i) {
    adjusted(i) = ws.y_l(i) - loop.re.at(sample.domains()[static_cast<std::size_t>(i)]);
  }
  Forest final_forest = fit_forest(sample.covariates(), adjusted, ws.w, fp, forest_rng);

  GmerfFit fit;
  fit.forest = std::move(final_forest);
  fit.vc = loop.vc;
  fit.re = loop.re;
  fit.macro_changes = std::move(loop.macro_changes);
  fit.micro_logliks = std::move(loop.micro_logliks);
  fit.macro_converged = loop.macro_converged;
  fit.micro_converged = loop.micro_converged;
  fit.macro_iterations = loop.macro_iterations;
  for (std::int64_t id : sample.index().ids()) fit.sample_sizes[id] = sample.domain_size(id);
  fit.covariate_names = sample.covariate_names();
  fit.params = params;
  return fit;
}

std::pair<double, double> predict_unit_gmerf(const GmerfFit& fit, const Eigen::VectorXd& x,
                                             std::int64_t domain) {
  const double eta = fit.forest.predict_row(x) + fit.re.at(domain);
  return {eta, std::exp(eta)};
}

}  // namespace saecount
