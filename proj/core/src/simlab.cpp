#include "saecount/simlab.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "saecount/errors.hpp"
#include "saecount/log.hpp"
#include "saecount/parallel.hpp"

namespace saecount {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

double draw_outcome(ScenarioName name, RngHandle& rng, double mu) {
  switch (name) {
    case ScenarioName::normal_poisson:
    case ScenarioName::interaction_poisson:
      return sample_poisson_real(rng, mu);
    case ScenarioName::nb3:
      return sample_negbinom_real(rng, mu, 3.0);
    case ScenarioName::nb1:
      return sample_negbinom_real(rng, mu, 1.0);
  }
  return 0.0;
}

struct ReplicateResult {
  bool ok = false;
  // estimates[method_slot][domain_slot]; truths[domain_slot]
  std::vector<std::vector<double>> estimates;
  std::vector<double> truths;
  std::vector<std::vector<double>> mse_estimates;  // per scheme slot
};

struct Fits {
  std::optional<GlmmFit> ebpp;
  std::optional<GmerfFit> gmerf;
  std::optional<MerfFit> merf;
};

std::vector<double> run_methods(const SimOptions& options, const Sample& sample,
                                const Population& population, Method method, RngHandle rng,
                                Fits& fits) {
  switch (method) {
    case Method::ebpp: {
      fits.ebpp = fit_poisson_glmm_pql(sample, options.ebpp_tol, options.ebpp_max_iter);
      const auto est = ebpp_domain_means(*fits.ebpp, sample, population);
      std::vector<double> out;
      for (const auto& row : est.rows) out.push_back(row.estimate);
      return out;
    }
    case Method::gmerf: {
      GmerfParams params;
      params.forest = options.forest;
      params.forest.threads = 1;
      params.micro_tol = options.gmerf_micro_tol;
      params.macro_tol = options.gmerf_macro_tol;
      params.max_macro = options.gmerf_max_macro;
      params.max_micro = options.gmerf_max_micro;
      fits.gmerf = fit_gmerf(sample, params, rng);
      const auto est = gmerf_domain_means(*fits.gmerf, population, options.aggregation, 1);
      std::vector<double> out;
      for (const auto& row : est.rows) out.push_back(row.estimate);
      return out;
    }
    case Method::merf: {
      MerfParams params;
      params.forest = options.forest;
      params.forest.threads = 1;
      params.tol = options.merf_tol;
      params.max_iter = options.merf_max_iter;
      fits.merf = fit_merf(sample, params, rng);
      const auto est = merf_domain_means(*fits.merf, population, 1);
      std::vector<double> out;
      for (const auto& row : est.rows) out.push_back(row.estimate);
      return out;
    }
  }
  throw validation_error("unknown method");
}

std::vector<double> run_scheme_once(const SimOptions& options, Scheme scheme, const Sample& sample,
                                    const Population& population,
                                    const std::map<std::int64_t, int>& plan, const Fits& fits,
                                    RngHandle rng) {
  BootstrapOptions bopt;
  bopt.threads = 1;
  bopt.aggregation = options.aggregation;
  MseReport report;
  switch (scheme) {
    case Scheme::gmerf_parametric:
      if (!fits.gmerf) throw validation_error("scheme gmerf-parametric needs method gmerf");
      report = parametric_bootstrap_gmerf(*fits.gmerf, population, plan,
                                          options.bootstrap_replicates, rng, bopt);
      break;
    case Scheme::gmerf_nonparametric:
      if (!fits.gmerf) throw validation_error("scheme gmerf-nonparametric needs method gmerf");
      report = nonparametric_bootstrap_gmerf(*fits.gmerf, sample, population,
                                             options.bootstrap_replicates, rng, bopt);
      break;
    case Scheme::merf_nonparametric:
      if (!fits.merf) throw validation_error("scheme merf-nonparametric needs method merf");
      report = nonparametric_bootstrap_merf(*fits.merf, sample, population,
                                            options.bootstrap_replicates, rng, bopt);
      break;
  }
  std::vector<double> out;
  for (const auto& row : report.rows) out.push_back(row.mse);
  return out;
}

SimReport aggregate(const std::vector<ReplicateResult>& results, const SimOptions& options,
                    const std::vector<std::int64_t>& domain_ids,
                    const std::map<std::int64_t, int>& plan,
                    const std::vector<std::vector<double>>* fixed_truths_per_method) {
  const int d = static_cast<int>(domain_ids.size());
  SimReport report;
  report.requested_replicates = static_cast<int>(results.size());

  std::vector<const ReplicateResult*> ok;
  for (const auto& r : results) {
    if (r.ok) ok.push_back(&r);
  }
  report.failed_replicates = report.requested_replicates - static_cast<int>(ok.size());
  if (ok.empty()) throw validation_error("all simulation replicates failed");

  auto in_sample_of = [&](std::int64_t id) {
    auto it = plan.find(id);
    return it != plan.end() && it->second > 0;
  };

  for (std::size_t mi = 0; mi < options.methods.size(); ++mi) {
    std::vector<std::vector<double>> est, truth;
    for (const auto* r : ok) {
      est.push_back(r->estimates[mi]);
      truth.push_back(r->truths);
    }
    (void)fixed_truths_per_method;
    const DomainMetrics metrics = compute_metrics(est, truth, {});
    for (int k = 0; k < d; ++k) {
      report.point_rows.push_back({options.methods[mi], domain_ids[static_cast<std::size_t>(k)],
                                   in_sample_of(domain_ids[static_cast<std::size_t>(k)]),
                                   metrics.bias[static_cast<std::size_t>(k)],
                                   metrics.rmse[static_cast<std::size_t>(k)]});
    }
  }

  for (std::size_t si = 0; si < options.schemes.size(); ++si) {
    const Method m = scheme_method(options.schemes[si]);
    const auto mit = std::find(options.methods.begin(), options.methods.end(), m);
    if (mit == options.methods.end()) continue;
    const std::size_t mi = static_cast<std::size_t>(mit - options.methods.begin());
    std::vector<std::vector<double>> est, truth, mse;
    for (const auto* r : ok) {
      est.push_back(r->estimates[mi]);
      truth.push_back(r->truths);
      mse.push_back(r->mse_estimates[si]);
    }
    const DomainMetrics metrics = compute_metrics(est, truth, mse);
    for (int k = 0; k < d; ++k) {
      report.mse_rows.push_back({options.schemes[si], domain_ids[static_cast<std::size_t>(k)],
                                 in_sample_of(domain_ids[static_cast<std::size_t>(k)]),
                                 metrics.rb_rmse[static_cast<std::size_t>(k)],
                                 metrics.rrmse_rmse[static_cast<std::size_t>(k)]});
    }
  }
  return report;
}

SimReport run_replicated(const SimOptions& options, const std::vector<std::int64_t>& domain_ids,
                         const std::map<std::int64_t, int>& plan, RngHandle rng,
                         const std::function<GeneratedPopulation(RngHandle&)>& population_of,
                         bool regenerate_truths) {
  const int m_total = options.replicates;
  if (m_total <= 0) throw validation_error("simulation needs replicates >= 1");
  std::vector<ReplicateResult> results(static_cast<std::size_t>(m_total));

  parallel_for(m_total, options.threads, [&](int m) {
    RngHandle rng_m = rng.split(static_cast<std::uint64_t>(m));
    ReplicateResult& res = results[static_cast<std::size_t>(m)];
    try {
      RngHandle pop_rng = rng_m.split(0);
      const GeneratedPopulation gen = population_of(pop_rng);
      RngHandle sample_rng = rng_m.split(1);
      const Sample sample = stratified_srswor(sample_rng, gen.population, plan);

      Fits fits;
      res.truths = gen.true_means;
      res.estimates.resize(options.methods.size());
      for (std::size_t mi = 0; mi < options.methods.size(); ++mi) {
        res.estimates[mi] = run_methods(options, sample, gen.population, options.methods[mi],
                                        rng_m.split(10 + mi), fits);
      }
      res.mse_estimates.resize(options.schemes.size());
      for (std::size_t si = 0; si < options.schemes.size(); ++si) {
        res.mse_estimates[si] = run_scheme_once(options, options.schemes[si], sample,
                                                gen.population, plan, fits, rng_m.split(100 + si));
      }
      res.ok = true;
    } catch (const std::exception& e) {
      log_event(LogLevel::warn, "simulation_replicate_failed",
                {{"replicate", m}, {"reason", e.what()}});
      res.ok = false;
    }
  });
  (void)regenerate_truths;
  return aggregate(results, options, domain_ids, plan, nullptr);
}

}  // namespace

ScenarioName scenario_from_string(const std::string& name) {
  if (name == "Normal-Poisson" || name == "normal-poisson") return ScenarioName::normal_poisson;
  if (name == "Interaction-Poisson" || name == "interaction-poisson") {
    return ScenarioName::interaction_poisson;
  }
  if (name == "NB3" || name == "nb3") return ScenarioName::nb3;
  if (name == "NB1" || name == "nb1") return ScenarioName::nb1;
  throw validation_error("unknown scenario '" + name + "'");
}

std::string to_string(ScenarioName name) {
  switch (name) {
    case ScenarioName::normal_poisson: return "Normal-Poisson";
    case ScenarioName::interaction_poisson: return "Interaction-Poisson";
    case ScenarioName::nb3: return "NB3";
    case ScenarioName::nb1: return "NB1";
  }
  return "?";
}

double scenario_linear_predictor(ScenarioName name, double x1, double x2, double nu) {
  switch (name) {
    case ScenarioName::normal_poisson:
      return 2.0 + x1 + x2 + nu;
    case ScenarioName::interaction_poisson:
    case ScenarioName::nb3:
    case ScenarioName::nb1:
      return 2.0 + 2.0 * x1 * x2 + x2 * x2 + nu;
  }
  return 0.0;
}

Method scheme_method(Scheme scheme) {
  switch (scheme) {
    case Scheme::gmerf_parametric:
    case Scheme::gmerf_nonparametric:
      return Method::gmerf;
    case Scheme::merf_nonparametric:
      return Method::merf;
  }
  return Method::gmerf;
}

std::string to_string(Method m) {
  switch (m) {
    case Method::ebpp: return "ebpp";
    case Method::gmerf: return "gmerf";
    case Method::merf: return "merf";
  }
  return "?";
}

std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::gmerf_parametric: return "gmerf-parametric";
    case Scheme::gmerf_nonparametric: return "gmerf-nonparametric";
    case Scheme::merf_nonparametric: return "merf-nonparametric";
  }
  return "?";
}

Method method_from_string(const std::string& name) {
  if (name == "ebpp") return Method::ebpp;
  if (name == "gmerf") return Method::gmerf;
  if (name == "merf") return Method::merf;
  throw validation_error("unknown method '" + name + "'");
}

Scheme scheme_from_string(const std::string& name) {
  if (name == "gmerf-parametric" || name == "parametric") return Scheme::gmerf_parametric;
  if (name == "gmerf-nonparametric" || name == "np-gmerf") return Scheme::gmerf_nonparametric;
  if (name == "merf-nonparametric" || name == "npc-merf") return Scheme::merf_nonparametric;
  throw validation_error("unknown bootstrap scheme '" + name + "'");
}

std::map<std::int64_t, int> Scenario::plan_map() const {
  std::vector<int> plan = sample_plan;
  if (plan.empty()) {
    if (num_domains == 50) {
      plan = model_based_sample_plan_50();
    } else if (num_domains == 20) {
      plan = model_based_sample_plan_20();
    } else {
      throw validation_error("no default sample plan for D = " + std::to_string(num_domains));
    }
  }
  if (static_cast<int>(plan.size()) != num_domains) {
    throw validation_error("sample plan length does not match the number of domains");
  }
  std::map<std::int64_t, int> out;
  for (int i = 0; i < num_domains; ++i) out[i + 1] = plan[static_cast<std::size_t>(i)];
  return out;
}

GeneratedPopulation generate_population(const Scenario& scenario, RngHandle rng) {
  const int d = scenario.num_domains;
  const int per = scenario.units_per_domain;
  if (d <= 0 || per <= 0) throw validation_error("scenario needs positive D and N_i");
  const int n = d * per;

  // Separate streams for random effects, covariates and outcomes: scenarios
  // sharing a seed then share (x, nu) exactly, differing only in the
  // response family (common random numbers across families).
  RngHandle nu_rng = rng.split(0);
  RngHandle cov_rng = rng.split(1);
  RngHandle y_rng = rng.split(2);

  std::vector<double> nu(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) nu[static_cast<std::size_t>(i)] = sample_normal(nu_rng, 0.0, 0.3);

  std::vector<std::int64_t> domain(static_cast<std::size_t>(n));
  std::vector<double> y(static_cast<std::size_t>(n));
  Eigen::MatrixXd x(n, 2);
  std::vector<double> true_means(static_cast<std::size_t>(d), 0.0);

  int row = 0;
  for (int i = 0; i < d; ++i) {
    double sum = 0.0;
    for (int j = 0; j < per; ++j, ++row) {
      const double x1 = sample_uniform(cov_rng, -1.0, 1.0);
      const double x2 = sample_normal(cov_rng, 0.0, 1.0);
      const double eta = scenario_linear_predictor(scenario.name, x1, x2, nu[static_cast<std::size_t>(i)]);
      const double mu = std::exp(std::min(eta, 690.0));
      const double yij = draw_outcome(scenario.name, y_rng, mu);
      domain[static_cast<std::size_t>(row)] = i + 1;
      x(row, 0) = x1;
      x(row, 1) = x2;
      y[static_cast<std::size_t>(row)] = yij;
      sum += yij;
    }
    true_means[static_cast<std::size_t>(i)] = sum / static_cast<double>(per);
  }

  GeneratedPopulation out{
      Population(std::move(domain), std::move(x), {"x1", "x2"}, std::move(y)),
      std::move(true_means)};
  return out;
}

DomainMetrics compute_metrics(const std::vector<std::vector<double>>& estimates,
                              const std::vector<std::vector<double>>& truths,
                              const std::vector<std::vector<double>>& mse_estimates) {
  const std::size_t m = estimates.size();
  if (m == 0 || truths.size() != m) throw validation_error("compute_metrics: misaligned arrays");
  const std::size_t d = estimates.front().size();
  const bool with_mse = !mse_estimates.empty();
  if (with_mse && mse_estimates.size() != m) {
    throw validation_error("compute_metrics: misaligned mse array");
  }

  DomainMetrics out;
  out.bias.assign(d, 0.0);
  out.rmse.assign(d, 0.0);
  out.rb_rmse.assign(d, kNan);
  out.rrmse_rmse.assign(d, kNan);

  for (std::size_t k = 0; k < d; ++k) {
    double sum_err = 0.0, sum_sq = 0.0;
    for (std::size_t r = 0; r < m; ++r) {
      if (estimates[r].size() != d || truths[r].size() != d) {
        throw validation_error("compute_metrics: ragged replicate arrays");
      }
      const double e = estimates[r][k] - truths[r][k];
      sum_err += e;
      sum_sq += e * e;
    }
    out.bias[k] = sum_err / static_cast<double>(m);
    out.rmse[k] = std::sqrt(sum_sq / static_cast<double>(m));

    if (with_mse && out.rmse[k] > 0.0) {
      double mean_mse = 0.0, sq_dev = 0.0;
      for (std::size_t r = 0; r < m; ++r) {
        mean_mse += mse_estimates[r][k];
        const double dev = std::sqrt(std::max(0.0, mse_estimates[r][k])) - out.rmse[k];
        sq_dev += dev * dev;
      }
      mean_mse /= static_cast<double>(m);
      out.rb_rmse[k] = (std::sqrt(std::max(0.0, mean_mse)) - out.rmse[k]) / out.rmse[k];
      out.rrmse_rmse[k] = std::sqrt(sq_dev / static_cast<double>(m)) / out.rmse[k];
    }
  }
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) return kNan;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

namespace {

double summary_over(const std::vector<SimReport::PointRow>& rows, Method m, bool want_median,
                    bool bias) {
  std::vector<double> v;
  for (const auto& r : rows) {
    if (r.method == m) v.push_back(bias ? r.bias : r.rmse);
  }
  if (v.empty()) return kNan;
  if (want_median) return median(std::move(v));
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

double SimReport::median_bias(Method m) const { return summary_over(point_rows, m, true, true); }
double SimReport::median_rmse(Method m) const { return summary_over(point_rows, m, true, false); }
double SimReport::mean_bias(Method m) const { return summary_over(point_rows, m, false, true); }
double SimReport::mean_rmse(Method m) const { return summary_over(point_rows, m, false, false); }

double SimReport::median_rb_rmse(Scheme s) const {
  std::vector<double> v;
  for (const auto& r : mse_rows) {
    if (r.scheme == s && !std::isnan(r.rb_rmse)) v.push_back(r.rb_rmse);
  }
  return median(std::move(v));
}

double SimReport::median_rrmse_rmse(Scheme s) const {
  std::vector<double> v;
  for (const auto& r : mse_rows) {
    if (r.scheme == s && !std::isnan(r.rrmse_rmse)) v.push_back(r.rrmse_rmse);
  }
  return median(std::move(v));
}

int SimReport::out_of_sample_count() const {
  int count = 0;
  if (point_rows.empty()) return 0;
  const Method first = point_rows.front().method;
  for (const auto& r : point_rows) {
    if (r.method == first && !r.in_sample) ++count;
  }
  return count;
}

SimReport run_model_based(const Scenario& scenario, const SimOptions& options, RngHandle rng) {
  const auto plan = scenario.plan_map();
  std::vector<std::int64_t> ids;
  for (const auto& [id, n_i] : plan) ids.push_back(id);
  return run_replicated(options, ids, plan, rng,
                        [&](RngHandle& r) { return generate_population(scenario, r); },
                        /*regenerate_truths=*/true);
}

SimReport run_design_based(const Population& census, const std::map<std::int64_t, int>& plan,
                           const SimOptions& options, RngHandle rng) {
  if (!census.has_outcome()) throw validation_error("design-based census needs outcomes");
  for (const auto& [id, n_i] : plan) {
    if (n_i > 0 && census.domain_size(id) == 0) {
      throw validation_error("plan domain " + std::to_string(id) + " missing from census");
    }
  }
  std::vector<double> truths;
  for (std::int64_t id : census.index().ids()) {
    const auto& rows = census.index().rows(id);
    double sum = 0.0;
    for (int r : rows) sum += census.outcomes()[static_cast<std::size_t>(r)];
    truths.push_back(sum / static_cast<double>(rows.size()));
  }
  const std::vector<std::int64_t> ids = census.index().ids();
  GeneratedPopulation fixed{census, truths};
  return run_replicated(options, ids, plan, rng,
                        [&](RngHandle&) { return fixed; },
                        /*regenerate_truths=*/false);
}

}  // namespace saecount
