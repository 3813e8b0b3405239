#include <doctest.h>

#include <cmath>

#include "saecount/ebpp.hpp"
#include "saecount/errors.hpp"
#include "saecount/glm.hpp"
#include "saecount/rng.hpp"
#include "test_support.hpp"

using namespace saecount;

namespace {

// Straight Newton-Raphson on the Poisson log-likelihood, independent of the
// IRLS path in fit_poisson_glm.
Eigen::VectorXd newton_poisson(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  const int n = static_cast<int>(x.rows());
  Eigen::MatrixXd m(n, x.cols() + 1);
  m.col(0).setOnes();
  m.rightCols(x.cols()) = x;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(m.cols());
  for (int iter = 0; iter < 200; ++iter) {
    Eigen::VectorXd mu = (m * beta).array().exp();
    Eigen::VectorXd score = m.transpose() * (y - mu);
    Eigen::MatrixXd hess = m.transpose() * mu.asDiagonal() * m;
    const Eigen::VectorXd step = hess.ldlt().solve(score);
    beta += step;
    if (step.cwiseAbs().maxCoeff() < 1e-13) break;
  }
  return beta;
}

}  // namespace

TEST_CASE("poisson GLM: intercept-only data recovers log(mean)") {
  const int n = 200;
  Eigen::MatrixXd x(n, 1);
  Eigen::VectorXd y(n);
  RngHandle rng(51);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    x(i, 0) = 0.0;
    y(i) = static_cast<double>(sample_poisson(rng, 5.0));
    total += y(i);
  }
  const GlmFit fit = fit_poisson_glm(x, y);
  CHECK(fit.converged);
  CHECK(fit.beta(0) == doctest::Approx(std::log(total / n)).epsilon(1e-8));
}

TEST_CASE("poisson GLM: IRLS agrees with a direct Newton oracle") {
  RngHandle rng(53);
  const int n = 400;
  Eigen::MatrixXd x(n, 2);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = sample_uniform(rng, -1.0, 1.0);
    x(i, 1) = sample_normal(rng, 0.0, 1.0);
    // Perfect log-linear responses: the score is exactly zero at the truth.
    y(i) = std::exp(1.0 + 0.7 * x(i, 0) - 0.4 * x(i, 1));
  }
  const GlmFit fit = fit_poisson_glm(x, y);
  const Eigen::VectorXd oracle = newton_poisson(x, y);
  for (int j = 0; j < 3; ++j) CHECK(fit.beta(j) == doctest::Approx(oracle(j)).epsilon(1e-6));
  CHECK(fit.beta(0) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(fit.beta(1) == doctest::Approx(0.7).epsilon(1e-6));
  CHECK(fit.beta(2) == doctest::Approx(-0.4).epsilon(1e-6));
}

TEST_CASE("AIC forward selection keeps informative covariates and drops noise") {
  RngHandle rng(57);
  const int n = 500;
  std::vector<std::int64_t> domains;
  std::vector<double> y;
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < n; ++i) {
    const double x1 = sample_uniform(rng, -1.0, 1.0);
    const double noise = sample_normal(rng, 0.0, 1.0);
    domains.push_back(1 + i % 5);
    rows.push_back({x1, noise});
    y.push_back(static_cast<double>(sample_poisson(rng, std::exp(1.0 + 1.2 * x1))));
  }
  const Sample sample = test_support::make_sample(domains, y, rows);
  const auto selected = select_covariates_aic(sample);
  REQUIRE_FALSE(selected.empty());
  CHECK(selected.front() == 0);
}

TEST_CASE("PQL GLMM: matches the plain GLM when there is no domain effect") {
  RngHandle rng(61);
  auto data = test_support::poisson_glmm_data(rng, 10, 40, 1.5, 0.8, -0.5, /*sigma_nu=*/0.0);
  const Sample sample = test_support::to_sample(data);
  const GlmmFit fit = fit_poisson_glmm_pql(sample);
  Eigen::VectorXd y(sample.n());
  for (int i = 0; i < sample.n(); ++i) y(i) = sample.outcomes()[static_cast<std::size_t>(i)];
  const GlmFit glm = fit_poisson_glm(sample.covariates(), y);
  for (int j = 0; j < 3; ++j) CHECK(fit.beta(j) == doctest::Approx(glm.beta(j)).epsilon(1e-3));
}

TEST_CASE("PQL GLMM: coefficient recovery on the baseline generating process") {
  int hits = 0;
  const int runs = 100;
  for (int seed = 0; seed < runs; ++seed) {
    RngHandle rng(7000 + seed);
    // eta = 2 + x1 + x2 + nu, the baseline scenario layout at survey scale.
    auto data = test_support::poisson_glmm_data(rng, 50, 18, 2.0, 1.0, 1.0, 0.3);
    const Sample sample = test_support::to_sample(data);
    const GlmmFit fit = fit_poisson_glmm_pql(sample);
    const bool ok = std::fabs(fit.beta(0) - 2.0) <= 0.15 && std::fabs(fit.beta(1) - 1.0) <= 0.15 &&
                    std::fabs(fit.beta(2) - 1.0) <= 0.15;
    if (ok) ++hits;
  }
  CHECK(hits >= 80);
}

TEST_CASE("PQL GLMM: rank-deficient design names the collinear column") {
  RngHandle rng(63);
  const int n = 60;
  std::vector<std::int64_t> domains;
  std::vector<double> y;
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < n; ++i) {
    domains.push_back(1 + i % 3);
    rows.push_back({sample_uniform(rng, -1.0, 1.0), 0.0});  // x2 constant zero
    y.push_back(static_cast<double>(sample_poisson(rng, 3.0)));
  }
  Eigen::MatrixXd x(n, 2);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = rows[static_cast<std::size_t>(i)][0];
    x(i, 1) = rows[static_cast<std::size_t>(i)][1];
  }
  const Sample sample(domains, x, {"x1", "zerocol"}, y);
  CHECK_THROWS_WITH_AS(fit_poisson_glmm_pql(sample), doctest::Contains("zerocol"),
                       validation_error);
}

TEST_CASE("EBPP domain mean: census limit, out-of-sample branch, two-unit formula") {
  // Hand-built fit: beta = (log 6, 0), so every predicted mu is 6.
  GlmmFit fit;
  fit.beta = Eigen::VectorXd(2);
  fit.beta << std::log(6.0), 0.0;
  fit.vc = {0.25, 1.0};
  fit.re = RandomEffects({1}, {0.0});
  fit.covariate_names = {"x1"};
  fit.sample_sizes = {{1, 1}};

  SUBCASE("two units, one sampled with y = 4, one with mu = 6") {
    const Population pop = test_support::make_population({1, 1}, {{0.2}, {0.9}});
    const Sample sample = test_support::make_sample({1}, {4}, {{0.2}});
    CHECK(ebpp_domain_mean(fit, sample, pop, 1) == doctest::Approx(5.0).epsilon(1e-12));
  }
  SUBCASE("fully sampled domain returns the exact sample mean") {
    const Population pop = test_support::make_population({1, 1, 1}, {{0.2}, {0.9}, {-1.0}});
    const Sample sample = test_support::make_sample({1, 1, 1}, {4, 7, 1}, {{0.2}, {0.9}, {-1.0}});
    CHECK(ebpp_domain_mean(fit, sample, pop, 1) == doctest::Approx(4.0).epsilon(1e-12));
  }
  SUBCASE("out-of-sample domain averages exp(x'beta)") {
    const Population pop = test_support::make_population({2, 2}, {{0.0}, {0.0}});
    const Sample sample = test_support::make_sample({1}, {4}, {{0.2}});
    CHECK(ebpp_domain_mean(fit, sample, pop, 2) == doctest::Approx(6.0).epsilon(1e-12));
    CHECK_THROWS_AS(ebpp_domain_mean(fit, sample, pop, 42), validation_error);
  }
}

TEST_CASE("EBPP domain mean lies inside the span of observed and predicted values") {
  RngHandle rng(67);
  auto data = test_support::poisson_glmm_data(rng, 6, 12, 1.0, 0.6, -0.3, 0.3);
  const Sample sample = test_support::to_sample(data);
  const Population pop(data.domains, data.x, {"x1", "x2"}, data.y);
  const GlmmFit fit = fit_poisson_glmm_pql(sample);
  for (std::int64_t id : pop.index().ids()) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (int r : sample.index().rows(id)) {
      lo = std::min(lo, sample.outcomes()[static_cast<std::size_t>(r)]);
      hi = std::max(hi, sample.outcomes()[static_cast<std::size_t>(r)]);
    }
    for (int r : pop.index().rows(id)) {
      const double mu = glmm_unit_mean(fit, pop.covariates().row(r), id);
      lo = std::min(lo, mu);
      hi = std::max(hi, mu);
    }
    const double est = ebpp_domain_mean(fit, sample, pop, id);
    CHECK(est >= lo - 1e-9);
    CHECK(est <= hi + 1e-9);
  }
}

TEST_CASE("PQL GLMM converges and is stable at its fixed point") {
  RngHandle rng(71);
  auto data = test_support::poisson_glmm_data(rng, 12, 20, 1.2, 0.5, 0.5, 0.3);
  const Sample sample = test_support::to_sample(data);
  const GlmmFit first = fit_poisson_glmm_pql(sample, 1e-7, 200);
  CHECK(first.converged);
  const GlmmFit second = fit_poisson_glmm_pql(sample, 1e-7, 200);
  CHECK(first.beta == second.beta);
  CHECK(first.vc.sigma2_nu == second.vc.sigma2_nu);
}
