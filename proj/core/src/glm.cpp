#include "saecount/glm.hpp"

#include <cmath>
#include <limits>

#include "saecount/errors.hpp"

namespace saecount {

namespace {

constexpr double kEtaCap = 30.0;

Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd m(x.rows(), x.cols() + 1);
  m.col(0).setOnes();
  m.rightCols(x.cols()) = x;
  return m;
}

}  // namespace

double poisson_glm_loglik(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                          const Eigen::VectorXd& beta) {
  const Eigen::MatrixXd m = with_intercept(x);
  double ll = 0.0;
  for (int i = 0; i < m.rows(); ++i) {
    const double eta = std::clamp(m.row(i).dot(beta), -kEtaCap, kEtaCap);
    ll += y(i) * eta - std::exp(eta) - std::lgamma(y(i) + 1.0);
  }
  return ll;
}

GlmFit fit_poisson_glm(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double tol,
                       int max_iter) {
  const int n = static_cast<int>(x.rows());
  if (n == 0) throw validation_error("fit_poisson_glm: empty data");
  if (y.size() != n) throw validation_error("fit_poisson_glm: outcome length mismatch");
  const Eigen::MatrixXd m = with_intercept(x);
  const int q = static_cast<int>(m.cols());

  GlmFit fit;
  fit.beta = Eigen::VectorXd::Zero(q);
  // mu0 = y + 0.5 keeps the first working response finite at y = 0.
  Eigen::VectorXd eta = (y.array() + 0.5).log().matrix();

  for (int iter = 0; iter < max_iter; ++iter) {
    Eigen::VectorXd mu(n), z(n), w(n);
    for (int i = 0; i < n; ++i) {
      const double e = std::clamp(eta(i), -kEtaCap, kEtaCap);
      mu(i) = std::exp(e);
      w(i) = mu(i);
      z(i) = e + (y(i) - mu(i)) / mu(i);
    }
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(q, q);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(q);
    for (int i = 0; i < n; ++i) {
      a.noalias() += w(i) * m.row(i).transpose() * m.row(i);
      b.noalias() += w(i) * z(i) * m.row(i).transpose();
    }
    const Eigen::VectorXd beta_new = a.ldlt().solve(b);
    if (!beta_new.allFinite()) {
      fit.converged = false;
      fit.iterations = iter + 1;
      return fit;
    }
    double rel = 0.0;
    for (int j = 0; j < q; ++j) {
      rel = std::max(rel, std::fabs(beta_new(j) - fit.beta(j)) / (std::fabs(fit.beta(j)) + 1.0));
    }
    fit.beta = beta_new;
    eta = m * fit.beta;
    fit.iterations = iter + 1;
    if (rel < tol) {
      fit.converged = true;
      break;
    }
  }
  fit.loglik = poisson_glm_loglik(x, y, fit.beta);
  return fit;
}

std::vector<int> select_covariates_aic(const Sample& sample) {
  const int n = sample.n();
  const int p = sample.p();
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) y(i) = sample.outcomes()[static_cast<std::size_t>(i)];

  std::vector<int> selected;
  std::vector<bool> in_model(static_cast<std::size_t>(p), false);

  auto fit_subset = [&](const std::vector<int>& cols) {
    Eigen::MatrixXd xs(n, static_cast<int>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) {
      xs.col(static_cast<int>(j)) = sample.covariates().col(cols[j]);
    }
    const GlmFit f = fit_poisson_glm(xs, y);
    return -2.0 * f.loglik + 2.0 * (static_cast<double>(cols.size()) + 1.0);
  };

  double best_aic = fit_subset({});
  for (;;) {
    int best_col = -1;
    double best_candidate = best_aic;
    for (int j = 0; j < p; ++j) {
      if (in_model[static_cast<std::size_t>(j)]) continue;
      std::vector<int> cols = selected;
      cols.push_back(j);
      const double aic = fit_subset(cols);
      if (aic < best_candidate - 1e-12) {
        best_candidate = aic;
        best_col = j;
      }
    }
    if (best_col < 0) break;
    selected.push_back(best_col);
    in_model[static_cast<std::size_t>(best_col)] = true;
    best_aic = best_candidate;
  }
  return selected;
}

}  // namespace saecount
