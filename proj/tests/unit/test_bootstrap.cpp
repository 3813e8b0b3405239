#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "saecount/bootstrap.hpp"
#include "saecount/errors.hpp"
#include "saecount/rng.hpp"
#include "test_support.hpp"

using namespace saecount;

namespace {

struct Toy {
  Sample sample;
  Population population;
};

Toy make_toy(RngHandle& rng, int domains = 3, int census_per_domain = 40, int sampled = 8) {
  auto data = test_support::poisson_glmm_data(rng, domains, census_per_domain, 1.2, 0.6, -0.3, 0.3);
  Population pop(data.domains, data.x, {"x1", "x2"}, data.y);
  std::map<std::int64_t, int> plan;
  for (int d = 1; d <= domains; ++d) plan[d] = sampled;
  RngHandle draw = rng.split(777);
  Sample sample = stratified_srswor(draw, pop, plan);
  return {std::move(sample), std::move(pop)};
}

GmerfParams quick_gmerf(int trees = 25) {
  GmerfParams p;
  p.forest.num_trees = trees;
  p.max_macro = 10;
  p.max_micro = 20;
  return p;
}

MerfParams quick_merf(int trees = 25) {
  MerfParams p;
  p.forest.num_trees = trees;
  p.max_iter = 20;
  return p;
}

}  // namespace

TEST_CASE("center_scale_residuals: contract cases and the variance property") {
  SUBCASE("[1, -1] rescaled to variance 4 is [2, -2]") {
    const auto out = center_scale_residuals(std::vector<double>{1.0, -1.0}, 4.0);
    CHECK(out == std::vector<double>{2.0, -2.0});
  }
  SUBCASE("zero target variance returns zeros") {
    const auto out = center_scale_residuals(std::vector<double>{3.0, 5.0, 9.0}, 0.0);
    for (double v : out) CHECK(v == 0.0);
  }
  SUBCASE("zero-variance input returns zeros with a warning") {
    test_support::LogCapture capture;
    const auto out = center_scale_residuals(std::vector<double>{2.0, 2.0, 2.0}, 1.5);
    for (double v : out) CHECK(v == 0.0);
    CHECK(capture.count("center_scale_zero_variance") == 1);
  }
  SUBCASE("any input hits the target variance to 1e-12") {
    RngHandle rng(131);
    for (int rep = 0; rep < 20; ++rep) {
      const int n = 2 + static_cast<int>(rng.bounded(40));
      std::vector<double> z;
      for (int i = 0; i < n; ++i) z.push_back(sample_normal(rng, 3.0, 2.5));
      const double target = sample_uniform(rng, 0.01, 9.0);
      const auto out = center_scale_residuals(z, target);
      double mean = 0.0;
      for (double v : out) mean += v;
      mean /= n;
      double var = 0.0;
      for (double v : out) var += (v - mean) * (v - mean);
      var /= n;
      CHECK(std::fabs(mean) < 1e-12);
      CHECK(var == doctest::Approx(target).epsilon(1e-12));
    }
  }
}

TEST_CASE("nearest matcher: spec cases and tie-breaking") {
  SUBCASE("4.9 against {2, 5, 9} matches the unit holding 5") {
    const NearestMatcher m(std::vector<double>{2.0, 5.0, 9.0});
    CHECK(m.match(4.9) == 1);
  }
  SUBCASE("3.2 against {1, 3, 6} matches the unit holding 3") {
    const NearestMatcher m(std::vector<double>{1.0, 3.0, 6.0});
    CHECK(m.match(3.2) == 1);
  }
  SUBCASE("equidistant values break toward the lower sample index") {
    const NearestMatcher m(std::vector<double>{4.0, 2.0});  // 3.0 is equidistant
    CHECK(m.match(3.0) == 0);
    const NearestMatcher m2(std::vector<double>{2.0, 4.0});
    CHECK(m2.match(3.0) == 0);
    const NearestMatcher m3(std::vector<double>{9.0, 4.0, 2.0});
    CHECK(m3.match(3.0) == 1);  // 4.0 at index 1 beats 2.0 at index 2
  }
  SUBCASE("duplicate predictor values resolve to the lowest index") {
    const NearestMatcher m(std::vector<double>{7.0, 3.0, 3.0, 9.0});
    CHECK(m.match(3.1) == 1);
  }
  SUBCASE("values beyond the range clamp to the extremes") {
    const NearestMatcher m(std::vector<double>{2.0, 5.0});
    CHECK(m.match(-100.0) == 0);
    CHECK(m.match(100.0) == 1);
  }
}

TEST_CASE("residual decomposition: level targets and exact scaling") {
  RngHandle rng(133);
  Toy toy = make_toy(rng);
  const Eigen::VectorXd fhat =
      Eigen::VectorXd::Constant(toy.sample.n(), std::log(4.0));
  const double sigma2_nu = 0.07;
  const ResidualDecomposition resid = decompose_residuals(
      toy.sample, std::span<const double>(fhat.data(), static_cast<std::size_t>(fhat.size())),
      /*pearson=*/true, sigma2_nu);

  // Pearson residuals against mu = 4.
  for (int i = 0; i < toy.sample.n(); ++i) {
    const double expected = (toy.sample.outcomes()[static_cast<std::size_t>(i)] - 4.0) / 2.0;
    CHECK(resid.z[static_cast<std::size_t>(i)] == doctest::Approx(expected).epsilon(1e-12));
  }
  // Level-2 variance scaled to sigma2_nu.
  double mean2 = 0.0;
  for (double v : resid.z2_centered_scaled) mean2 += v;
  mean2 /= static_cast<double>(resid.z2_centered_scaled.size());
  double var2 = 0.0;
  for (double v : resid.z2_centered_scaled) var2 += (v - mean2) * (v - mean2);
  var2 /= static_cast<double>(resid.z2_centered_scaled.size());
  CHECK(var2 == doctest::Approx(sigma2_nu).epsilon(1e-10));
  // Level-1 variance hits the n - D corrected target.
  double var1 = 0.0;
  for (double v : resid.z1_centered_scaled) var1 += v * v;
  var1 /= static_cast<double>(resid.z1_centered_scaled.size());
  CHECK(var1 == doctest::Approx(resid.level1_target_var).epsilon(1e-9));
}

TEST_CASE("bootstrap populations draw outcomes from the observed sample multiset") {
  RngHandle rng(137);
  Toy toy = make_toy(rng);
  const GmerfFit gfit = fit_gmerf(toy.sample, quick_gmerf(), RngHandle(138));
  const MerfFit mfit = fit_merf(toy.sample, quick_merf(), RngHandle(139));

  const std::multiset<double> support(toy.sample.outcomes().begin(), toy.sample.outcomes().end());
  auto in_support = [&](double v) { return support.count(v) > 0; };

  SUBCASE("gmerf non-parametric scheme") {
    const Eigen::VectorXd fhat_census = gfit.forest.predict(toy.population.covariates());
    const Eigen::VectorXd fhat_sample = gfit.forest.predict(toy.sample.covariates());
    const ResidualDecomposition resid = decompose_residuals(
        toy.sample,
        std::span<const double>(fhat_sample.data(), static_cast<std::size_t>(fhat_sample.size())),
        true, gfit.vc.sigma2_nu);
    std::vector<double> predictors;
    for (int i = 0; i < toy.sample.n(); ++i) {
      predictors.push_back(std::exp(fhat_sample(i) +
                                    gfit.re.at(toy.sample.domains()[static_cast<std::size_t>(i)])));
    }
    const NearestMatcher matcher(predictors);
    RngHandle pop_rng(140);
    const BootstrapPopulation boot = make_np_bootstrap_population_gmerf(
        toy.sample, toy.population,
        std::span<const double>(fhat_census.data(), static_cast<std::size_t>(fhat_census.size())),
        resid, matcher, pop_rng);
    for (double v : boot.y) CHECK(in_support(v));
  }
  SUBCASE("merf non-parametric scheme") {
    const Eigen::VectorXd fhat_census = mfit.forest.predict(toy.population.covariates());
    const Eigen::VectorXd fhat_sample = mfit.forest.predict(toy.sample.covariates());
    const ResidualDecomposition resid = decompose_residuals(
        toy.sample,
        std::span<const double>(fhat_sample.data(), static_cast<std::size_t>(fhat_sample.size())),
        false, mfit.vc.sigma2_nu);
    std::vector<double> predictors;
    for (int i = 0; i < toy.sample.n(); ++i) {
      predictors.push_back(fhat_sample(i) +
                           mfit.re.at(toy.sample.domains()[static_cast<std::size_t>(i)]));
    }
    const NearestMatcher matcher(predictors);
    RngHandle pop_rng(141);
    const BootstrapPopulation boot = make_np_bootstrap_population_merf(
        toy.sample, toy.population,
        std::span<const double>(fhat_census.data(), static_cast<std::size_t>(fhat_census.size())),
        resid, matcher, pop_rng);
    for (double v : boot.y) CHECK(in_support(v));
  }
}

TEST_CASE("parametric bootstrap population means track exp(f + nu) at large N_i") {
  // Constant forest log(5), two domains of 10^4 units.
  Eigen::MatrixXd train = Eigen::MatrixXd::Zero(4, 1);
  train.col(0) << 0, 1, 2, 3;
  GmerfFit fit;
  fit.forest = fit_forest(train, Eigen::VectorXd::Constant(4, std::log(5.0)),
                          Eigen::VectorXd::Ones(4), ForestParams{.num_trees = 3, .bootstrap = false},
                          RngHandle(142));
  fit.vc = {0.04, 0.5};
  fit.re = RandomEffects({1, 2}, {0.1, -0.1});
  fit.sample_sizes = {{1, 10}, {2, 10}};
  fit.covariate_names = {"x1"};

  const int per = 10000;
  std::vector<std::int64_t> domains;
  std::vector<std::vector<double>> rows;
  std::vector<double> y;
  for (int d = 1; d <= 2; ++d) {
    for (int j = 0; j < per; ++j) {
      domains.push_back(d);
      rows.push_back({0.5});
      y.push_back(1.0);
    }
  }
  const Population pop = test_support::make_population(domains, rows, y);
  const Eigen::VectorXd fhat = fit.forest.predict(pop.covariates());
  RngHandle rng(143);
  const BootstrapPopulation boot = make_parametric_bootstrap_population(
      fit, pop, std::span<const double>(fhat.data(), static_cast<std::size_t>(fhat.size())), rng);
  REQUIRE(boot.nu.size() == 2);
  for (int k = 0; k < 2; ++k) {
    const double target = std::exp(std::log(5.0) + boot.nu[static_cast<std::size_t>(k)]);
    CHECK(std::fabs(boot.true_means[static_cast<std::size_t>(k)] - target) < 0.02 * target);
  }
}

TEST_CASE("degenerate parametric scheme: zero variance and a flat forest give iid Poisson worlds") {
  Eigen::MatrixXd train = Eigen::MatrixXd::Zero(4, 2);
  train.col(0) << 0, 1, 2, 3;
  GmerfFit fit;
  fit.forest = fit_forest(train, Eigen::VectorXd::Constant(4, std::log(5.0)),
                          Eigen::VectorXd::Ones(4), ForestParams{.num_trees = 3, .bootstrap = false},
                          RngHandle(161));
  fit.vc = {0.0, 0.5};
  fit.re = RandomEffects({1, 2}, {0.0, 0.0});
  fit.sample_sizes = {{1, 12}, {2, 12}};
  fit.covariate_names = {"x1", "x2"};
  fit.params.forest.num_trees = 10;
  fit.params.max_macro = 6;
  fit.params.max_micro = 10;

  std::vector<std::int64_t> domains;
  std::vector<std::vector<double>> rows;
  std::vector<double> y;
  for (int d = 1; d <= 2; ++d) {
    for (int j = 0; j < 400; ++j) {
      domains.push_back(d);
      rows.push_back({0.1 * (j % 7), 0.0});
      y.push_back(3.0);
    }
  }
  const Population pop = test_support::make_population(domains, rows, y);
  const Eigen::VectorXd fhat = fit.forest.predict(pop.covariates());
  RngHandle rng(162);
  const BootstrapPopulation boot = make_parametric_bootstrap_population(
      fit, pop, std::span<const double>(fhat.data(), static_cast<std::size_t>(fhat.size())), rng);
  CHECK(boot.nu[0] == 0.0);
  CHECK(boot.nu[1] == 0.0);
  // iid Pois(5) domain means at N_i = 400: within a few standard errors.
  for (double m : boot.true_means) CHECK(std::fabs(m - 5.0) < 0.5);

  const MseReport report =
      parametric_bootstrap_gmerf(fit, pop, {{1, 12}, {2, 12}}, 3, RngHandle(163));
  for (const auto& row : report.rows) CHECK(row.mse > 0.0);
}

TEST_CASE("B = 1 reduces to a single squared deviation") {
  RngHandle rng(145);
  Toy toy = make_toy(rng, 3, 25, 6);
  GmerfFit fit = fit_gmerf(toy.sample, quick_gmerf(20), RngHandle(146));

  std::map<std::int64_t, int> plan;
  for (std::int64_t id : toy.sample.index().ids()) plan[id] = toy.sample.domain_size(id);

  const MseReport report = parametric_bootstrap_gmerf(fit, toy.population, plan, 1, RngHandle(147));
  CHECK(report.requested_replicates == 1);
  CHECK(report.failures == 0);

  // Replay replicate 0 by hand with the same stream layout.
  const Eigen::VectorXd fhat = fit.forest.predict(toy.population.covariates());
  RngHandle rng_b = RngHandle(147).split(0);
  RngHandle pop_rng = rng_b.split(0);
  const BootstrapPopulation boot = make_parametric_bootstrap_population(
      fit, toy.population, std::span<const double>(fhat.data(), static_cast<std::size_t>(fhat.size())),
      pop_rng);
  Population pop_b(toy.population.domains(), toy.population.covariates(),
                   toy.population.covariate_names(), boot.y);
  RngHandle draw_rng = rng_b.split(1);
  const Sample sample_b = stratified_srswor(draw_rng, pop_b, plan);
  GmerfParams refit_params = fit.params;
  refit_params.max_macro = std::max(1, refit_params.max_macro / 2);
  refit_params.max_micro = std::max(1, refit_params.max_micro / 2);
  const GmerfFit refit = fit_gmerf(sample_b, refit_params, rng_b.split(2));
  const DomainEstimates est = gmerf_domain_means(refit, toy.population);

  for (std::size_t k = 0; k < report.rows.size(); ++k) {
    const double err = est.rows[k].estimate - boot.true_means[k];
    CHECK(report.rows[k].mse == doctest::Approx(err * err).epsilon(1e-10));
  }
}

TEST_CASE("perfect-fit toy: merf scheme is driven by resampling only") {
  // Constant outcomes: residuals vanish, matching returns the constant.
  std::vector<std::int64_t> domains;
  std::vector<double> y;
  std::vector<std::vector<double>> rows;
  RngHandle rng(149);
  for (int i = 0; i < 60; ++i) {
    domains.push_back(1 + i % 3);
    y.push_back(4.0);
    rows.push_back({sample_uniform(rng, -1.0, 1.0), sample_normal(rng, 0.0, 1.0)});
  }
  const Sample sample = test_support::make_sample(domains, y, rows);
  const Population pop(domains, sample.covariates(), sample.covariate_names(), y);
  const MerfFit fit = fit_merf(sample, quick_merf(15), RngHandle(150));
  const MseReport report = nonparametric_bootstrap_merf(fit, sample, pop, 4, RngHandle(151));
  for (const auto& row : report.rows) {
    CHECK(row.mse >= 0.0);
    CHECK(row.mse < 1e-10);  // every bootstrap outcome equals the constant
  }
}

TEST_CASE("all schemes produce nonnegative MSE for every domain, including out-of-sample") {
  RngHandle rng(153);
  auto data = test_support::poisson_glmm_data(rng, 4, 30, 1.2, 0.6, -0.3, 0.3);
  Population pop(data.domains, data.x, {"x1", "x2"}, data.y);
  std::map<std::int64_t, int> plan{{1, 8}, {2, 8}, {3, 8}, {4, 0}};  // domain 4 out of sample
  RngHandle draw = rng.split(1);
  const Sample sample = stratified_srswor(draw, pop, plan);

  const GmerfFit gfit = fit_gmerf(sample, quick_gmerf(15), RngHandle(154));
  const MerfFit mfit = fit_merf(sample, quick_merf(15), RngHandle(155));

  const MseReport p = parametric_bootstrap_gmerf(gfit, pop, plan, 3, RngHandle(156));
  const MseReport np = nonparametric_bootstrap_gmerf(gfit, sample, pop, 3, RngHandle(157));
  const MseReport npc = nonparametric_bootstrap_merf(mfit, sample, pop, 3, RngHandle(158));
  for (const auto& report : {p, np, npc}) {
    REQUIRE(report.rows.size() == 4);
    for (const auto& row : report.rows) {
      CHECK(row.mse >= 0.0);
      CHECK(std::isfinite(row.mse));
    }
    CHECK_FALSE(report.rows.back().in_sample);
    CHECK(report.rows.front().in_sample);
  }
}

TEST_CASE("bootstrap replicates are deterministic in the seed and thread count") {
  RngHandle rng(159);
  Toy toy = make_toy(rng, 3, 25, 6);
  const GmerfFit fit = fit_gmerf(toy.sample, quick_gmerf(15), RngHandle(160));
  std::map<std::int64_t, int> plan;
  for (std::int64_t id : toy.sample.index().ids()) plan[id] = toy.sample.domain_size(id);

  BootstrapOptions serial;
  serial.threads = 1;
  BootstrapOptions parallel;
  parallel.threads = 2;
  const MseReport a = parametric_bootstrap_gmerf(fit, toy.population, plan, 6, RngHandle(161), serial);
  const MseReport b = parametric_bootstrap_gmerf(fit, toy.population, plan, 6, RngHandle(161), parallel);
  REQUIRE(a.rows.size() == b.rows.size());
  for (std::size_t k = 0; k < a.rows.size(); ++k) {
    CHECK(a.rows[k].mse == b.rows[k].mse);
    CHECK(a.rows[k].cv == doctest::Approx(b.rows[k].cv).epsilon(1e-15));
  }
}
