#include <doctest.h>

#include <cmath>

#include "saecount/errors.hpp"
#include "saecount/serialize.hpp"
#include "test_support.hpp"

using namespace saecount;

namespace {

Sample toy_sample(unsigned seed) {
  RngHandle rng(seed);
  auto data = test_support::poisson_glmm_data(rng, 4, 15, 1.3, 0.7, -0.3, 0.3);
  return test_support::to_sample(data);
}

}  // namespace

TEST_CASE("gmerf artifact: stable bytes and preserved predictions") {
  const Sample sample = toy_sample(301);
  GmerfParams params;
  params.forest.num_trees = 20;
  const GmerfFit fit = fit_gmerf(sample, params, RngHandle(302));

  const std::string text = serialize_fit(fit);
  const GmerfFit loaded = deserialize_gmerf(text);
  CHECK(serialize_fit(loaded) == text);
  CHECK(artifact_method(text) == "gmerf");

  RngHandle rng(303);
  for (int rep = 0; rep < 10; ++rep) {
    Eigen::VectorXd x(2);
    x << sample_uniform(rng, -1.0, 1.0), sample_normal(rng, 0.0, 1.0);
    const std::int64_t dom = 1 + static_cast<std::int64_t>(rng.bounded(5));
    CHECK(predict_unit_gmerf(loaded, x, dom).second ==
          doctest::Approx(predict_unit_gmerf(fit, x, dom).second).epsilon(1e-15));
  }
  CHECK(loaded.vc.sigma2_nu == fit.vc.sigma2_nu);
  CHECK(loaded.sample_sizes == fit.sample_sizes);
}

TEST_CASE("merf artifact: stable bytes and preserved predictions") {
  const Sample sample = toy_sample(305);
  MerfParams params;
  params.forest.num_trees = 20;
  const MerfFit fit = fit_merf(sample, params, RngHandle(306));

  const std::string text = serialize_fit(fit);
  const MerfFit loaded = deserialize_merf(text);
  CHECK(serialize_fit(loaded) == text);
  CHECK(artifact_method(text) == "merf");
  Eigen::VectorXd x(2);
  x << 0.3, -0.6;
  CHECK(predict_unit_merf(loaded, x, 2) == predict_unit_merf(fit, x, 2));
}

TEST_CASE("ebpp artifact: stable bytes and coefficient fidelity") {
  const Sample sample = toy_sample(307);
  const GlmmFit fit = fit_poisson_glmm_pql(sample);
  const std::string text = serialize_fit(fit);
  const GlmmFit loaded = deserialize_glmm(text);
  CHECK(serialize_fit(loaded) == text);
  CHECK(artifact_method(text) == "ebpp");
  CHECK(loaded.beta == fit.beta);
  CHECK(loaded.vc.sigma2_eps == fit.vc.sigma2_eps);
}

TEST_CASE("artifact envelope validation") {
  CHECK_THROWS_AS(deserialize_gmerf("{\"format\":\"other\"}"), validation_error);
  const Sample sample = toy_sample(309);
  MerfParams params;
  params.forest.num_trees = 5;
  const std::string merf_text = serialize_fit(fit_merf(sample, params, RngHandle(310)));
  CHECK_THROWS_AS(deserialize_gmerf(merf_text), validation_error);
}
