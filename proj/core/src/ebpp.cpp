#include "saecount/ebpp.hpp"

#include <cmath>

#include "saecount/errors.hpp"
#include "saecount/glm.hpp"
#include "saecount/log.hpp"

namespace saecount {

namespace {

constexpr double kEtaCap = 30.0;
constexpr double kVarFloor = 1e-12;

void check_full_rank(const Eigen::MatrixXd& design, const std::vector<std::string>& names) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  qr.setThreshold(1e-10);
  const int rank = static_cast<int>(qr.rank());
  const int q = static_cast<int>(design.cols());
  if (rank >= q) return;
  // Columns permuted beyond the rank are the dependent ones.
  const auto perm = qr.colsPermutation().indices();
  std::string cols;
  for (int j = rank; j < q; ++j) {
    if (!cols.empty()) cols += ", ";
    const int original = perm(j);
    cols += original == 0 ? "(intercept)" : names[static_cast<std::size_t>(original - 1)];
  }
  throw validation_error("design matrix is rank deficient; collinear columns: " + cols);
}

}  // namespace

GlmmFit fit_poisson_glmm_pql(const Sample& sample, double tol, int max_iter) {
  const int n = sample.n();
  const int p = sample.p();
  if (n == 0) throw validation_error("fit_poisson_glmm_pql: empty sample");

  Eigen::MatrixXd design(n, p + 1);
  design.col(0).setOnes();
  design.rightCols(p) = sample.covariates();
  check_full_rank(design, sample.covariate_names());

  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) y(i) = sample.outcomes()[static_cast<std::size_t>(i)];
  std::span<const std::int64_t> domains(sample.domains().data(), static_cast<std::size_t>(n));

  GlmmFit fit;
  fit.covariate_names = sample.covariate_names();
  const GlmFit glm = fit_poisson_glm(sample.covariates(), y);
  fit.beta = glm.converged ? glm.beta
                           : Eigen::VectorXd::Zero(p + 1);
  if (!glm.converged) fit.beta(0) = std::log(y.mean() + 0.5);

  std::vector<double> nu_by_row(static_cast<std::size_t>(n), 0.0);
  double prev_sigma_nu = 0.0;

  for (int iter = 0; iter < max_iter; ++iter) {
    // Working response and weights at the current conditional means.
    Eigen::VectorXd xb = design * fit.beta;
    Eigen::VectorXd y_l(n), w(n);
    for (int i = 0; i < n; ++i) {
      const double eta = std::clamp(xb(i) + nu_by_row[static_cast<std::size_t>(i)], -kEtaCap, kEtaCap);
      const double mu = std::max(std::exp(eta), 1e-8);
      y_l(i) = std::log(mu) + (y(i) - mu) / mu;
      w(i) = mu;
    }

    // Variance components on the residual y_L - X beta.
    const LmmFit lmm = fit_intercept_lmm(
        std::span<const double>(y_l.data(), static_cast<std::size_t>(n)),
        std::span<const double>(xb.data(), static_cast<std::size_t>(n)),
        std::span<const double>(w.data(), static_cast<std::size_t>(n)), domains);
    fit.vc = lmm.vc;

    // GLS for beta under the random-intercept covariance via Woodbury.
    const double a = std::max(fit.vc.sigma2_eps, kVarFloor);
    const double c = fit.vc.sigma2_nu;
    Eigen::MatrixXd lhs = Eigen::MatrixXd::Zero(p + 1, p + 1);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p + 1);
    for (std::int64_t id : sample.index().ids()) {
      const auto& rows = sample.index().rows(id);
      Eigen::MatrixXd xw = Eigen::MatrixXd::Zero(p + 1, 1);
      double sw = 0.0, swy = 0.0;
      Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(p + 1, p + 1);
      Eigen::VectorXd xty = Eigen::VectorXd::Zero(p + 1);
      for (int r : rows) {
        const double wi = w(r);
        const auto xi = design.row(r);
        xtx.noalias() += wi * xi.transpose() * xi;
        xty.noalias() += wi * y_l(r) * xi.transpose();
        xw.col(0).noalias() += wi * xi.transpose();
        sw += wi;
        swy += wi * y_l(r);
      }
      const double kappa = c / (a + c * sw);
      lhs.noalias() += xtx / a - (kappa / a) * xw * xw.transpose();
      rhs.noalias() += xty / a - (kappa / a) * swy * xw.col(0);
    }
    const Eigen::VectorXd beta_new = lhs.ldlt().solve(rhs);
    if (!beta_new.allFinite()) {
      log_event(LogLevel::warn, "glmm_pql_diverged", {{"iteration", iter + 1}});
      fit.converged = false;
      fit.iterations = iter + 1;
      break;
    }

    // BLUPs at the updated beta.
    xb = design * beta_new;
    std::vector<double> nu_new(static_cast<std::size_t>(n), 0.0);
    RandomEffects re_new;
    {
      std::vector<std::int64_t> ids;
      std::vector<double> nus;
      for (std::int64_t id : sample.index().ids()) {
        const auto& rows = sample.index().rows(id);
        double sw = 0.0, swr = 0.0;
        for (int r : rows) {
          sw += w(r);
          swr += w(r) * (y_l(r) - xb(r));
        }
        double nu = 0.0;
        if (c > 0.0) nu = (swr / a) / (1.0 / c + sw / a);
        ids.push_back(id);
        nus.push_back(nu);
      }
      re_new = RandomEffects(std::move(ids), std::move(nus));
    }
    for (int i = 0; i < n; ++i) {
      nu_new[static_cast<std::size_t>(i)] = re_new.at(sample.domains()[static_cast<std::size_t>(i)]);
    }

    double rel = 0.0;
    for (int j = 0; j <= p; ++j) {
      rel = std::max(rel, std::fabs(beta_new(j) - fit.beta(j)) / (std::fabs(fit.beta(j)) + 1.0));
    }
    rel = std::max(rel, std::fabs(fit.vc.sigma2_nu - prev_sigma_nu) / (prev_sigma_nu + 1.0));

    fit.beta = beta_new;
    fit.re = re_new;
    nu_by_row = std::move(nu_new);
    prev_sigma_nu = fit.vc.sigma2_nu;
    fit.iterations = iter + 1;
    if (rel < tol) {
      fit.converged = true;
      break;
    }
  }
  if (!fit.converged) {
    log_event(LogLevel::warn, "glmm_pql_not_converged", {{"iterations", fit.iterations}});
  }
  for (std::int64_t id : sample.index().ids()) fit.sample_sizes[id] = sample.domain_size(id);
  return fit;
}

double glmm_unit_mean(const GlmmFit& fit, const Eigen::VectorXd& x, std::int64_t domain) {
  if (x.size() + 1 != fit.beta.size()) {
    throw validation_error("glmm_unit_mean: covariate length mismatch");
  }
  double eta = fit.beta(0);
  for (int j = 0; j < x.size(); ++j) eta += fit.beta(j + 1) * x(j);
  eta += fit.re.at(domain);
  return std::exp(std::clamp(eta, -kEtaCap, kEtaCap));
}

double ebpp_domain_mean(const GlmmFit& fit, const Sample& sample, const Population& population,
                        std::int64_t domain) {
  const int cap = population.domain_size(domain);
  if (cap == 0) throw validation_error("ebpp_domain_mean: domain missing from population");

  double census_pred = 0.0;
  for (int r : population.index().rows(domain)) {
    census_pred += glmm_unit_mean(fit, population.covariates().row(r), domain);
  }
  double observed = 0.0, sample_pred = 0.0;
  if (sample.index().contains(domain)) {
    for (int r : sample.index().rows(domain)) {
      observed += sample.outcomes()[static_cast<std::size_t>(r)];
      sample_pred += glmm_unit_mean(fit, sample.covariates().row(r), domain);
    }
  }
  return (observed + census_pred - sample_pred) / static_cast<double>(cap);
}

}  // namespace saecount
