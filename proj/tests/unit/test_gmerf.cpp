#include <doctest.h>

#include <cmath>

#include "saecount/ebpp.hpp"
#include "saecount/errors.hpp"
#include "saecount/gmerf.hpp"
#include "saecount/rng.hpp"
#include "test_support.hpp"

using namespace saecount;

namespace {

GmerfParams small_params(int trees = 60) {
  GmerfParams p;
  p.forest.num_trees = trees;
  return p;
}

}  // namespace

TEST_CASE("poisson working update: direct formula cases") {
  SUBCASE("y = 3, eta = log 2") {
    const std::vector<double> y{3.0};
    Eigen::VectorXd eta(1);
    eta << std::log(2.0);
    const WorkingState ws = poisson_working_update(y, eta);
    CHECK(ws.mu(0) == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(ws.y_l(0) == doctest::Approx(std::log(2.0) + 0.5).epsilon(1e-12));
    CHECK(ws.y_l(0) == doctest::Approx(1.19315).epsilon(1e-5));
    CHECK(ws.w(0) == doctest::Approx(2.0).epsilon(1e-14));
  }
  SUBCASE("y equal to mu cancels the residual term") {
    const std::vector<double> y{5.0};
    Eigen::VectorXd eta(1);
    eta << std::log(5.0);
    const WorkingState ws = poisson_working_update(y, eta);
    CHECK(ws.y_l(0) == doctest::Approx(std::log(5.0)).epsilon(1e-14));
  }
  SUBCASE("y = 0, mu = 1") {
    const std::vector<double> y{0.0};
    Eigen::VectorXd eta = Eigen::VectorXd::Zero(1);
    const WorkingState ws = poisson_working_update(y, eta);
    CHECK(ws.y_l(0) == doctest::Approx(-1.0).epsilon(1e-14));
    CHECK(ws.w(0) == doctest::Approx(1.0).epsilon(1e-14));
  }
  SUBCASE("extreme eta is clamped and logged") {
    test_support::LogCapture capture;
    const std::vector<double> y{1.0};
    Eigen::VectorXd eta(1);
    eta << 100.0;
    const WorkingState ws = poisson_working_update(y, eta);
    CHECK(ws.eta(0) == 30.0);
    CHECK(capture.count("eta_clamped") == 1);
  }
}

TEST_CASE("working-variable identity w*(y_L - log mu) = y - mu holds at machine precision") {
  RngHandle rng(101);
  const int n = 500;
  std::vector<double> y(n);
  Eigen::VectorXd eta(n);
  for (int i = 0; i < n; ++i) {
    y[static_cast<std::size_t>(i)] = static_cast<double>(sample_poisson(rng, 6.0));
    eta(i) = sample_normal(rng, 1.0, 1.5);
  }
  const WorkingState ws = poisson_working_update(y, eta);
  for (int i = 0; i < n; ++i) {
    const double lhs = ws.w(i) * (ws.y_l(i) - std::log(ws.mu(i)));
    const double rhs = y[static_cast<std::size_t>(i)] - ws.mu(i);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("init_glm_poisson: intercept-only fit and the all-zero fallback") {
  SUBCASE("mean-five counts give a flat log-5 predictor") {
    RngHandle rng(103);
    std::vector<std::int64_t> domains;
    std::vector<double> y;
    std::vector<std::vector<double>> rows;
    double total = 0.0;
    for (int i = 0; i < 300; ++i) {
      domains.push_back(1 + i % 3);
      const double v = static_cast<double>(sample_poisson(rng, 5.0));
      y.push_back(v);
      total += v;
      rows.push_back({0.0});
    }
    const Sample sample = test_support::make_sample(domains, y, rows);
    const Eigen::VectorXd eta0 = init_glm_poisson(sample);
    for (int i = 0; i < 5; ++i) {
      CHECK(eta0(i) == doctest::Approx(std::log(total / 300.0)).epsilon(1e-6));
    }
  }
  SUBCASE("all-zero outcomes fall back to log(mean + 0.5)") {
    test_support::LogCapture capture;
    const Sample sample = test_support::make_sample({1, 1, 2}, {0, 0, 0}, {{0.1}, {0.2}, {0.3}});
    const Eigen::VectorXd eta0 = init_glm_poisson(sample);
    CHECK(eta0(0) == doctest::Approx(std::log(0.5)).epsilon(1e-12));
    CHECK(capture.count("glm_init_fallback") == 1);
  }
}

TEST_CASE("gmerf: constant outcome converges to log c within two macro-iterations") {
  std::vector<std::int64_t> domains;
  std::vector<double> y;
  std::vector<std::vector<double>> rows;
  RngHandle rng(107);
  for (int i = 0; i < 90; ++i) {
    domains.push_back(1 + i % 3);
    y.push_back(7.0);
    rows.push_back({sample_uniform(rng, -1.0, 1.0)});
  }
  const Sample sample = test_support::make_sample(domains, y, rows);
  const GmerfFit fit = fit_gmerf(sample, small_params(20), RngHandle(108));
  CHECK(fit.macro_converged);
  CHECK(fit.macro_iterations <= 2);
  Eigen::VectorXd x(1);
  x << 0.0;
  const auto [eta, mu] = predict_unit_gmerf(fit, x, 1);
  CHECK(mu == doctest::Approx(7.0).epsilon(1e-6));
  CHECK(eta == doctest::Approx(std::log(7.0)).epsilon(1e-6));
}

TEST_CASE("gmerf: baseline-scenario replicate converges with a plausible variance") {
  RngHandle rng(109);
  auto data = test_support::poisson_glmm_data(rng, 50, 18, 2.0, 1.0, 1.0, 0.3);
  const Sample sample = test_support::to_sample(data);
  const GmerfFit fit = fit_gmerf(sample, small_params(200), RngHandle(110));
  CHECK(fit.macro_converged);
  CHECK(fit.vc.sigma2_nu >= 0.2 * 0.09);
  CHECK(fit.vc.sigma2_nu <= 5.0 * 0.09);
  // Micro-loop convergence: last relative loglik change under the tolerance.
  const auto& last_trace = fit.micro_logliks.back();
  if (last_trace.size() >= 2) {
    const double a = last_trace[last_trace.size() - 2];
    const double b = last_trace.back();
    CHECK(std::fabs(b - a) / std::fabs(a) < small_params().micro_tol);
  }
}

TEST_CASE("gmerf: null random effect recovered as near-zero variance") {
  int hits = 0;
  const int runs = 50;
  for (int seed = 0; seed < runs; ++seed) {
    RngHandle rng(11000 + seed);
    auto data = test_support::poisson_glmm_data(rng, 10, 20, 1.2, 0.6, 0.0, 0.0);
    const Sample sample = test_support::to_sample(data);
    const GmerfFit fit = fit_gmerf(sample, small_params(40), RngHandle(11500 + seed));
    if (fit.vc.sigma2_nu < 0.01) ++hits;
  }
  CHECK(hits >= 45);
}

TEST_CASE("gmerf: unit predictions compose exp(forest + blup)") {
  RngHandle rng(113);
  auto data = test_support::poisson_glmm_data(rng, 6, 15, 1.4, 0.7, -0.3, 0.3);
  const Sample sample = test_support::to_sample(data);
  const GmerfFit fit = fit_gmerf(sample, small_params(40), RngHandle(114));

  for (int rep = 0; rep < 20; ++rep) {
    Eigen::VectorXd x(2);
    x << sample_uniform(rng, -1.0, 1.0), sample_normal(rng, 0.0, 1.0);
    const std::int64_t dom = 1 + static_cast<std::int64_t>(rng.bounded(8));
    const double eta_expected = fit.forest.predict_row(x) + blup_predict(fit.vc, fit.re, dom);
    const auto [eta, mu] = predict_unit_gmerf(fit, x, dom);
    CHECK(eta == doctest::Approx(eta_expected).epsilon(1e-12));
    CHECK(mu == doctest::Approx(std::exp(eta_expected)).epsilon(1e-12));
  }
  // nu = 0.3 on a flat forest: mu = exp(0.3) when the forest predicts zero.
  CHECK(std::exp(0.3) == doctest::Approx(1.3499).epsilon(1e-4));
}

TEST_CASE("gmerf PQL loop with a linear fixed part reproduces the PQL GLMM random effects") {
  RngHandle rng(117);
  auto data = test_support::poisson_glmm_data(rng, 25, 25, 1.5, 0.8, 0.5, 0.3);
  const Sample sample = test_support::to_sample(data);

  // Reference: the ebpp module's own PQL implementation, run tightly.
  const GlmmFit glmm = fit_poisson_glmm_pql(sample, 1e-10, 500);
  REQUIRE(glmm.converged);

  // Same loop as the GMERF, fixed part swapped for a weighted linear fit.
  const int n = sample.n();
  Eigen::MatrixXd design(n, 3);
  design.col(0).setOnes();
  design.rightCols(2) = sample.covariates();
  auto wls_fitter = [&](const Eigen::VectorXd& adjusted, const Eigen::VectorXd& w, int,
                        int) -> Eigen::VectorXd {
    Eigen::MatrixXd lhs = Eigen::MatrixXd::Zero(3, 3);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(3);
    for (int i = 0; i < n; ++i) {
      lhs.noalias() += w(i) * design.row(i).transpose() * design.row(i);
      rhs.noalias() += w(i) * adjusted(i) * design.row(i).transpose();
    }
    const Eigen::VectorXd beta = lhs.ldlt().solve(rhs);
    return design * beta;
  };

  const Eigen::VectorXd eta0 = init_glm_poisson(sample);
  std::span<const double> y(sample.outcomes().data(), static_cast<std::size_t>(n));
  std::span<const std::int64_t> domains(sample.domains().data(), static_cast<std::size_t>(n));
  const PqlLoopResult loop =
      run_pql_loop(y, domains, eta0, wls_fitter, 1e-10, 1e-8, 500, 500);
  REQUIRE(loop.macro_converged);

  for (std::int64_t id : sample.index().ids()) {
    CHECK(loop.re.at(id) == doctest::Approx(glmm.re.at(id)).epsilon(1e-4).scale(1.0));
  }
  CHECK(loop.vc.sigma2_nu == doctest::Approx(glmm.vc.sigma2_nu).epsilon(1e-3));
}

TEST_CASE("gmerf input validation") {
  CHECK_THROWS_AS(poisson_working_update(std::vector<double>{1.0}, Eigen::VectorXd::Zero(2)),
                  validation_error);
}
