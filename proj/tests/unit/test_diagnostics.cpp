#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "saecount/diagnostics.hpp"
#include "saecount/errors.hpp"
#include "saecount/glm.hpp"
#include "saecount/rng.hpp"
#include "test_support.hpp"

using namespace saecount;

TEST_CASE("pearson residuals: point cases and elementwise brute force") {
  CHECK(pearson_residuals(std::vector<double>{4.0}, std::vector<double>{4.0})[0] == 0.0);
  CHECK(pearson_residuals(std::vector<double>{9.0}, std::vector<double>{4.0})[0] ==
        doctest::Approx(2.5).epsilon(1e-14));

  RngHandle rng(171);
  std::vector<double> y, mu;
  for (int i = 0; i < 100; ++i) {
    mu.push_back(sample_uniform(rng, 0.5, 9.0));
    y.push_back(static_cast<double>(sample_poisson(rng, mu.back())));
  }
  const auto res = pearson_residuals(y, mu);
  for (std::size_t i = 0; i < y.size(); ++i) {
    CHECK(res[i] == doctest::Approx((y[i] - mu[i]) / std::sqrt(mu[i])).epsilon(1e-14));
  }
  CHECK_THROWS_AS(pearson_residuals(std::vector<double>{1.0}, std::vector<double>{0.0}),
                  validation_error);
}

TEST_CASE("dispersion ratio: hand cases") {
  CHECK(dispersion_ratio(std::vector<double>{0.0, 0.0, 0.0}, 3) == 0.0);
  CHECK(dispersion_ratio(std::vector<double>{1.0, -1.0, 1.0, -1.0}, 2) == doctest::Approx(2.0));
  CHECK_THROWS_AS(dispersion_ratio(std::vector<double>{1.0}, 0), validation_error);
}

TEST_CASE("dispersion ratio concentrates near 1 for Poisson-true fits") {
  int hits = 0;
  const int seeds = 50;
  for (int seed = 0; seed < seeds; ++seed) {
    RngHandle rng(20000 + seed);
    const int n = 5000;
    Eigen::MatrixXd x(n, 1);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
      x(i, 0) = sample_uniform(rng, -1.0, 1.0);
      y(i) = static_cast<double>(sample_poisson(rng, std::exp(1.0 + 0.5 * x(i, 0))));
    }
    const GlmFit fit = fit_poisson_glm(x, y);
    std::vector<double> mu(static_cast<std::size_t>(n)), yv(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      mu[static_cast<std::size_t>(i)] = std::exp(fit.beta(0) + fit.beta(1) * x(i, 0));
      yv[static_cast<std::size_t>(i)] = y(i);
    }
    const double ratio = dispersion_ratio(pearson_residuals(yv, mu), n - 2);
    if (ratio >= 0.9 && ratio <= 1.1) ++hits;
  }
  CHECK(hits >= 45);
}

TEST_CASE("dispersion ratio tracks theta on quasi-Poisson data") {
  // Var = theta * mu comes from NB with per-unit scale mu / (theta - 1).
  RngHandle rng(175);
  const double theta = 2.0;
  const int n = 10000;
  std::vector<double> y, mu;
  for (int i = 0; i < n; ++i) {
    const double m = std::exp(sample_uniform(rng, 0.5, 2.0));
    mu.push_back(m);
    y.push_back(static_cast<double>(sample_negbinom(rng, m, m / (theta - 1.0))));
  }
  const double ratio = dispersion_ratio(pearson_residuals(y, mu), n);
  CHECK(std::fabs(ratio - theta) < 0.10 * theta);
}

TEST_CASE("dean test: equality direction, permutation invariance") {
  SUBCASE("y identical to a large mu pushes the statistic negative") {
    std::vector<double> y(50, 100.0), mu(50, 100.0);
    const auto [stat, p] = dean_pb_test(y, mu);
    CHECK(stat < -1.0);
    CHECK(p > 0.85);
  }
  SUBCASE("permutation invariance is exact") {
    RngHandle rng(177);
    std::vector<double> y, mu;
    for (int i = 0; i < 60; ++i) {
      mu.push_back(sample_uniform(rng, 1.0, 8.0));
      y.push_back(static_cast<double>(sample_poisson(rng, mu.back())));
    }
    const auto [stat, p] = dean_pb_test(y, mu);
    std::vector<double> y2(y.rbegin(), y.rend());
    std::vector<double> mu2(mu.rbegin(), mu.rend());
    const auto [stat2, p2] = dean_pb_test(y2, mu2);
    CHECK(stat == stat2);
    CHECK(p == p2);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(dean_pb_test({}, {}), validation_error);
  }
}

TEST_CASE("dean test rejects overdispersed data at n = 2000") {
  int rejections = 0;
  const int seeds = 25;
  for (int seed = 0; seed < seeds; ++seed) {
    RngHandle rng(30000 + seed);
    const int n = 2000;
    std::vector<double> y, mu;
    for (int i = 0; i < n; ++i) {
      const double m = std::exp(1.0 + 0.5 * sample_uniform(rng, -1.0, 1.0));
      mu.push_back(m);
      y.push_back(static_cast<double>(sample_negbinom(rng, m, 1.0)));
    }
    const auto [stat, p] = dean_pb_test(y, mu);
    if (p < 0.05) ++rejections;
  }
  CHECK(rejections == seeds);
}

TEST_CASE("dispersion summary wires df = n - (p + 1) - D") {
  RngHandle rng(179);
  std::vector<double> y, mu;
  for (int i = 0; i < 40; ++i) {
    mu.push_back(4.0);
    y.push_back(static_cast<double>(sample_poisson(rng, 4.0)));
  }
  const DispersionSummary s = dispersion_summary(y, mu, /*n_covariates=*/2, /*n_domains=*/5);
  CHECK(s.residual_df == 40 - 3 - 5);
  CHECK(s.pearson.size() == 40);
  CHECK(s.ratio >= 0.0);
}
