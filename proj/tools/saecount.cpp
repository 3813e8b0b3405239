// saecount: unit-level small area estimation for count outcomes.
// Subcommands: fit | predict | mse | simulate | diagnose, each driven by a
// JSON config file with CLI flag overrides (flags win).

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "saecount/bootstrap.hpp"
#include "saecount/csv.hpp"
#include "saecount/data.hpp"
#include "saecount/diagnostics.hpp"
#include "saecount/ebpp.hpp"
#include "saecount/errors.hpp"
#include "saecount/glm.hpp"
#include "saecount/gmerf.hpp"
#include "saecount/log.hpp"
#include "saecount/merf.hpp"
#include "saecount/predict.hpp"
#include "saecount/serialize.hpp"
#include "saecount/simlab.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace saecount;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitNotConverged = 3;
constexpr int kExitIo = 4;

struct CommonConfig {
  json raw;
  std::uint64_t seed = 1;
  int threads = 1;
  fs::path out = ".";
};

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw validation_error("config section '" + where + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) {
      throw validation_error("unknown config key '" + key + "' in " + where);
    }
  }
}

json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open config '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw validation_error("config '" + path + "' is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw validation_error("config root must be a JSON object");
  return j;
}

CsvSchema schema_from_config(const json& cfg, bool outcome_required) {
  if (!cfg.contains("schema")) throw validation_error("config needs a 'schema' section");
  const json& s = cfg.at("schema");
  check_keys(s, {"domain", "outcome", "covariates"}, "schema");
  CsvSchema schema;
  schema.domain_col = s.at("domain").get<std::string>();
  if (s.contains("outcome")) schema.outcome_col = s.at("outcome").get<std::string>();
  if (outcome_required && !schema.outcome_col) {
    throw validation_error("schema needs an 'outcome' column for this command");
  }
  schema.covariate_cols = s.at("covariates").get<std::vector<std::string>>();
  if (schema.covariate_cols.empty()) throw validation_error("schema lists no covariates");
  return schema;
}

ForestParams forest_from_config(const json& cfg, int threads) {
  ForestParams p;
  p.num_trees = 500;
  if (cfg.contains("forest")) {
    const json& f = cfg.at("forest");
    check_keys(f, {"num_trees", "mtry", "min_node_size", "bootstrap"}, "forest");
    p.num_trees = f.value("num_trees", p.num_trees);
    p.mtry = f.value("mtry", p.mtry);
    p.min_node_size = f.value("min_node_size", p.min_node_size);
    p.bootstrap = f.value("bootstrap", p.bootstrap);
  }
  p.threads = threads;
  return p;
}

GmerfParams gmerf_from_config(const json& cfg, int threads) {
  GmerfParams p;
  p.forest = forest_from_config(cfg, threads);
  if (cfg.contains("gmerf")) {
    const json& g = cfg.at("gmerf");
    check_keys(g, {"micro_tol", "macro_tol", "max_macro", "max_micro"}, "gmerf");
    p.micro_tol = g.value("micro_tol", p.micro_tol);
    p.macro_tol = g.value("macro_tol", p.macro_tol);
    p.max_macro = g.value("max_macro", p.max_macro);
    p.max_micro = g.value("max_micro", p.max_micro);
  }
  return p;
}

MerfParams merf_from_config(const json& cfg, int threads) {
  MerfParams p;
  p.forest = forest_from_config(cfg, threads);
  if (cfg.contains("merf")) {
    const json& m = cfg.at("merf");
    check_keys(m, {"tol", "max_iter"}, "merf");
    p.tol = m.value("tol", p.tol);
    p.max_iter = m.value("max_iter", p.max_iter);
  }
  return p;
}

MeanAggregation aggregation_from_config(const json& cfg) {
  const std::string name = cfg.value("aggregation", "exp-of-mean");
  if (name == "exp-of-mean") return MeanAggregation::exp_of_mean_eta;
  if (name == "mean-of-exp") return MeanAggregation::mean_of_exp_eta;
  throw validation_error("aggregation must be 'exp-of-mean' or 'mean-of-exp'");
}

std::vector<std::string> output_header(const CommonConfig& common, const std::string& command) {
  return {"saecount " + command + " seed=" + std::to_string(common.seed)};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw io_error("failed writing '" + path.string() + "'");
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open '" + path.string() + "'");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return text;
}

CommonConfig parse_common(const json& cfg, std::uint64_t seed_flag, bool seed_set, int threads_flag,
                          bool threads_set, const std::string& out_flag) {
  CommonConfig common;
  common.raw = cfg;
  common.seed = cfg.value("seed", 1ULL);
  common.threads = cfg.value("threads", 1);
  common.out = cfg.value("out", std::string("."));
  if (seed_set) common.seed = seed_flag;
  if (threads_set) common.threads = threads_flag;
  if (!out_flag.empty()) common.out = out_flag;
  if (common.threads < 1) throw validation_error("threads must be >= 1");
  std::error_code ec;
  fs::create_directories(common.out, ec);
  if (ec) throw io_error("cannot create output directory '" + common.out.string() + "'");
  return common;
}

Sample subset_covariates(const Sample& sample, const std::vector<int>& cols) {
  Eigen::MatrixXd x(sample.n(), static_cast<int>(cols.size()));
  std::vector<std::string> names;
  for (std::size_t j = 0; j < cols.size(); ++j) {
    x.col(static_cast<int>(j)) = sample.covariates().col(cols[j]);
    names.push_back(sample.covariate_names()[static_cast<std::size_t>(cols[j])]);
  }
  return Sample(sample.domains(), std::move(x), std::move(names), sample.outcomes());
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

int cmd_fit(const CommonConfig& common) {
  const json& cfg = common.raw;
  check_keys(cfg, {"survey", "schema", "method", "forest", "gmerf", "merf", "ebpp", "seed",
                   "threads", "out"},
             "fit config");
  const std::string method = cfg.at("method").get<std::string>();
  const CsvSchema schema = schema_from_config(cfg, /*outcome_required=*/true);
  const Sample survey = load_sample_csv(cfg.at("survey").get<std::string>(), schema);
  RngHandle rng(common.seed);

  bool converged = true;
  std::string artifact;
  json summary{{"seed", common.seed}, {"method", method}};

  if (method == "gmerf") {
    const GmerfFit fit = fit_gmerf(survey, gmerf_from_config(cfg, common.threads), rng);
    converged = fit.macro_converged;
    artifact = serialize_fit(fit);
    summary["sigma2_nu"] = fit.vc.sigma2_nu;
    summary["sigma2_eps"] = fit.vc.sigma2_eps;
    summary["macro_iterations"] = fit.macro_iterations;
    summary["macro_converged"] = fit.macro_converged;
    summary["macro_changes"] = fit.macro_changes;
  } else if (method == "merf") {
    const MerfFit fit = fit_merf(survey, merf_from_config(cfg, common.threads), rng);
    converged = fit.converged;
    artifact = serialize_fit(fit);
    summary["sigma2_nu"] = fit.vc.sigma2_nu;
    summary["sigma2_eps"] = fit.vc.sigma2_eps;
    summary["iterations"] = fit.iterations;
    summary["converged"] = fit.converged;
    summary["loglik_trace"] = fit.trace;
  } else if (method == "ebpp") {
    double tol = 1e-6;
    int max_iter = 100;
    bool select_aic = false;
    if (cfg.contains("ebpp")) {
      const json& e = cfg.at("ebpp");
      check_keys(e, {"tol", "max_iter", "select_aic"}, "ebpp");
      tol = e.value("tol", tol);
      max_iter = e.value("max_iter", max_iter);
      select_aic = e.value("select_aic", select_aic);
    }
    const Sample* data = &survey;
    Sample selected = survey;
    if (select_aic) {
      const std::vector<int> cols = select_covariates_aic(survey);
      if (cols.empty()) throw validation_error("AIC selection kept no covariates");
      std::vector<int> sorted_cols = cols;
      std::sort(sorted_cols.begin(), sorted_cols.end());
      selected = subset_covariates(survey, sorted_cols);
      data = &selected;
      json kept = json::array();
      for (int c : sorted_cols) kept.push_back(survey.covariate_names()[static_cast<std::size_t>(c)]);
      summary["selected_covariates"] = kept;
    }
    const GlmmFit fit = fit_poisson_glmm_pql(*data, tol, max_iter);
    converged = fit.converged;
    artifact = serialize_fit(fit);
    summary["sigma2_nu"] = fit.vc.sigma2_nu;
    summary["sigma2_eps"] = fit.vc.sigma2_eps;
    summary["iterations"] = fit.iterations;
    summary["converged"] = fit.converged;
    json beta = json::array();
    for (int k = 0; k < fit.beta.size(); ++k) beta.push_back(fit.beta(k));
    summary["beta"] = std::move(beta);
  } else {
    throw validation_error("method must be one of gmerf|merf|ebpp");
  }

  write_text(common.out / ("fit_" + method + ".json"), artifact);
  summary["artifact"] = "fit_" + method + ".json";
  write_text(common.out / "fit_summary.json", summary.dump(2) + "\n");
  if (!converged) {
    log_event(LogLevel::warn, "fit_not_converged", {{"method", method}});
    return kExitNotConverged;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

Population load_census_for_fit(const json& cfg, const std::vector<std::string>& fit_covariates) {
  const json& s = cfg.at("schema");
  CsvSchema census_schema;
  census_schema.domain_col = s.at("domain").get<std::string>();
  census_schema.covariate_cols = fit_covariates;  // fit decides the columns
  return load_population_csv(cfg.at("census").get<std::string>(), census_schema);
}

void write_estimates_csv(const fs::path& path, const DomainEstimates& est,
                         const std::vector<std::string>& header) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : est.rows) {
    rows.push_back({std::to_string(r.domain), r.method, format_short(r.estimate),
                    r.in_sample ? "1" : "0", std::to_string(r.population_size),
                    std::to_string(r.sample_size)});
  }
  write_table_csv(path.string(), {"domain_id", "method", "estimate", "in_sample", "N_i", "n_i"},
                  rows, header);
}

int cmd_predict(const CommonConfig& common) {
  const json& cfg = common.raw;
  check_keys(cfg, {"fit", "census", "survey", "schema", "aggregation", "seed", "threads", "out"},
             "predict config");
  const std::string text = read_text(cfg.at("fit").get<std::string>());
  const std::string method = artifact_method(text);
  const MeanAggregation aggregation = aggregation_from_config(cfg);

  DomainEstimates est;
  if (method == "gmerf") {
    const GmerfFit fit = deserialize_gmerf(text);
    const Population census = load_census_for_fit(cfg, fit.covariate_names);
    est = gmerf_domain_means(fit, census, aggregation, common.threads);
  } else if (method == "merf") {
    const MerfFit fit = deserialize_merf(text);
    const Population census = load_census_for_fit(cfg, fit.covariate_names);
    est = merf_domain_means(fit, census, common.threads);
  } else {
    const GlmmFit fit = deserialize_glmm(text);
    const Population census = load_census_for_fit(cfg, fit.covariate_names);
    if (!cfg.contains("survey")) {
      throw validation_error("predict with an ebpp fit needs the survey file");
    }
    CsvSchema schema = schema_from_config(cfg, /*outcome_required=*/true);
    schema.covariate_cols = fit.covariate_names;
    const Sample survey = load_sample_csv(cfg.at("survey").get<std::string>(), schema);
    validate_sample_against_population(survey, census);
    est = ebpp_domain_means(fit, survey, census);
  }

  // Comparison output: the direct survey estimator (domain sample mean of
  // y) whenever the survey file is available.
  if (cfg.contains("survey")) {
    CsvSchema schema = schema_from_config(cfg, /*outcome_required=*/true);
    const Sample survey = load_sample_csv(cfg.at("survey").get<std::string>(), schema);
    CsvSchema census_schema;
    census_schema.domain_col = cfg.at("schema").at("domain").get<std::string>();
    census_schema.covariate_cols = schema.covariate_cols;
    const Population census =
        load_population_csv(cfg.at("census").get<std::string>(), census_schema);
    const DomainEstimates direct = direct_means(survey, census);
    for (const auto& row : direct.rows) est.rows.push_back(row);
  }

  write_estimates_csv(common.out / "domain_estimates.csv", est,
                      output_header(common, "predict"));
  return kExitOk;
}

// ---------------------------------------------------------------------------
// mse
// ---------------------------------------------------------------------------

int cmd_mse(const CommonConfig& common) {
  const json& cfg = common.raw;
  check_keys(cfg, {"fit", "census", "survey", "schema", "scheme", "B", "aggregation", "seed",
                   "threads", "out"},
             "mse config");
  const std::string text = read_text(cfg.at("fit").get<std::string>());
  const std::string method = artifact_method(text);
  const Scheme scheme = scheme_from_string(cfg.at("scheme").get<std::string>());
  const int B = cfg.value("B", 100);
  if (to_string(scheme_method(scheme)) != method) {
    throw validation_error("scheme '" + to_string(scheme) + "' needs a " +
                           to_string(scheme_method(scheme)) + " fit, got " + method);
  }

  BootstrapOptions options;
  options.threads = common.threads;
  options.aggregation = aggregation_from_config(cfg);
  RngHandle rng(common.seed);

  MseReport report;
  if (scheme == Scheme::gmerf_parametric) {
    const GmerfFit fit = deserialize_gmerf(text);
    const Population census = load_census_for_fit(cfg, fit.covariate_names);
    report = parametric_bootstrap_gmerf(fit, census, fit.sample_sizes, B, rng, options);
  } else if (scheme == Scheme::gmerf_nonparametric) {
    const GmerfFit fit = deserialize_gmerf(text);
    const Population census = load_census_for_fit(cfg, fit.covariate_names);
    CsvSchema schema = schema_from_config(cfg, /*outcome_required=*/true);
    schema.covariate_cols = fit.covariate_names;
    const Sample survey = load_sample_csv(cfg.at("survey").get<std::string>(), schema);
    report = nonparametric_bootstrap_gmerf(fit, survey, census, B, rng, options);
  } else {
    const MerfFit fit = deserialize_merf(text);
    const Population census = load_census_for_fit(cfg, fit.covariate_names);
    CsvSchema schema = schema_from_config(cfg, /*outcome_required=*/true);
    schema.covariate_cols = fit.covariate_names;
    const Sample survey = load_sample_csv(cfg.at("survey").get<std::string>(), schema);
    report = nonparametric_bootstrap_merf(fit, survey, census, B, rng, options);
  }

  std::vector<std::vector<std::string>> rows;
  for (const auto& r : report.rows) {
    rows.push_back({std::to_string(r.domain), report.scheme, format_short(r.mse),
                    format_short(r.rmse), format_short(r.cv),
                    std::to_string(report.requested_replicates),
                    std::to_string(report.failures)});
  }
  auto header = output_header(common, "mse");
  if (report.halved_iteration_caps) {
    header.push_back("replicate refits run with halved iteration caps");
  }
  write_table_csv((common.out / "mse_report.csv").string(),
                  {"domain_id", "scheme", "mse", "rmse", "cv", "B", "failures"}, rows, header);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

int cmd_simulate(const CommonConfig& common) {
  const json& cfg = common.raw;
  check_keys(cfg, {"kind", "scenario", "M", "B", "methods", "schemes", "num_domains",
                   "units_per_domain", "sample_plan", "census", "schema", "plan", "forest",
                   "gmerf", "merf", "ebpp_tol", "ebpp_max_iter", "aggregation", "seed", "threads",
                   "out"},
             "simulate config");
  const std::string kind = cfg.value("kind", "model-based");

  SimOptions options;
  options.replicates = cfg.value("M", 50);
  options.bootstrap_replicates = cfg.value("B", 100);
  options.forest = forest_from_config(cfg, /*threads=*/1);
  if (!cfg.contains("forest")) options.forest.num_trees = 200;  // desk-scale default
  options.threads = common.threads;
  options.aggregation = aggregation_from_config(cfg);
  if (cfg.contains("gmerf")) {
    const GmerfParams g = gmerf_from_config(cfg, 1);
    options.gmerf_micro_tol = g.micro_tol;
    options.gmerf_macro_tol = g.macro_tol;
    options.gmerf_max_macro = g.max_macro;
    options.gmerf_max_micro = g.max_micro;
  }
  if (cfg.contains("merf")) {
    const MerfParams m = merf_from_config(cfg, 1);
    options.merf_tol = m.tol;
    options.merf_max_iter = m.max_iter;
  }
  options.ebpp_tol = cfg.value("ebpp_tol", options.ebpp_tol);
  options.ebpp_max_iter = cfg.value("ebpp_max_iter", options.ebpp_max_iter);
  if (cfg.contains("methods")) {
    options.methods.clear();
    for (const auto& m : cfg.at("methods")) options.methods.push_back(method_from_string(m.get<std::string>()));
  }
  options.schemes.clear();
  if (cfg.contains("schemes")) {
    for (const auto& s : cfg.at("schemes")) options.schemes.push_back(scheme_from_string(s.get<std::string>()));
  }
  for (Scheme s : options.schemes) {
    if (std::find(options.methods.begin(), options.methods.end(), scheme_method(s)) ==
        options.methods.end()) {
      throw validation_error("scheme '" + to_string(s) + "' needs method '" +
                             to_string(scheme_method(s)) + "' enabled");
    }
  }

  RngHandle rng(common.seed);
  SimReport report;
  if (kind == "model-based") {
    Scenario scenario;
    scenario.name = scenario_from_string(cfg.at("scenario").get<std::string>());
    scenario.num_domains = cfg.value("num_domains", 50);
    scenario.units_per_domain = cfg.value("units_per_domain", 1000);
    if (cfg.contains("sample_plan")) {
      scenario.sample_plan = cfg.at("sample_plan").get<std::vector<int>>();
    }
    report = run_model_based(scenario, options, rng);
  } else if (kind == "design-based") {
    const CsvSchema schema = schema_from_config(cfg, /*outcome_required=*/true);
    const Population census = load_population_csv(cfg.at("census").get<std::string>(), schema);
    if (!cfg.contains("plan")) throw validation_error("design-based simulation needs a 'plan'");
    std::map<std::int64_t, int> plan;
    for (const auto& [key, value] : cfg.at("plan").items()) {
      plan[std::stoll(key)] = value.get<int>();
    }
    report = run_design_based(census, plan, options, rng);
  } else {
    throw validation_error("kind must be 'model-based' or 'design-based'");
  }

  const auto header = output_header(common, "simulate");
  {
    std::vector<std::vector<std::string>> rows;
    for (const auto& r : report.point_rows) {
      rows.push_back({to_string(r.method), std::to_string(r.domain), r.in_sample ? "1" : "0",
                      format_short(r.bias), format_short(r.rmse)});
    }
    write_table_csv((common.out / "sim_point_metrics.csv").string(),
                    {"method", "domain_id", "in_sample", "bias", "rmse"}, rows, header);
  }
  if (!report.mse_rows.empty()) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& r : report.mse_rows) {
      rows.push_back({to_string(r.scheme), std::to_string(r.domain), r.in_sample ? "1" : "0",
                      format_short(r.rb_rmse), format_short(r.rrmse_rmse)});
    }
    write_table_csv((common.out / "sim_mse_metrics.csv").string(),
                    {"scheme", "domain_id", "in_sample", "rb_rmse", "rrmse_rmse"}, rows, header);
  }
  {
    std::vector<std::vector<std::string>> rows;
    for (Method m : options.methods) {
      rows.push_back({"bias", to_string(m), format_short(report.median_bias(m)),
                      format_short(report.mean_bias(m))});
      rows.push_back({"rmse", to_string(m), format_short(report.median_rmse(m)),
                      format_short(report.mean_rmse(m))});
    }
    for (Scheme s : options.schemes) {
      rows.push_back({"rb_rmse", to_string(s), format_short(report.median_rb_rmse(s)), ""});
      rows.push_back({"rrmse_rmse", to_string(s), format_short(report.median_rrmse_rmse(s)), ""});
    }
    rows.push_back({"failed_replicates", "", std::to_string(report.failed_replicates), ""});
    write_table_csv((common.out / "sim_summary.csv").string(),
                    {"metric", "target", "median", "mean"}, rows, header);
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// diagnose
// ---------------------------------------------------------------------------

double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double pos = q * (static_cast<double>(sorted.size()) - 1.0);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(sorted.size() - 1, lo + 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

int write_diagnostics(const CommonConfig& common, const Sample& survey,
                      const std::vector<double>& mu_hat) {
  const int n_domains = survey.index().num_domains();
  const DispersionSummary summary = dispersion_summary(
      std::span<const double>(survey.outcomes().data(), static_cast<std::size_t>(survey.n())),
      mu_hat, survey.p(), n_domains);
  const auto header = output_header(common, "diagnose");

  {
    std::vector<std::vector<std::string>> rows;
    for (int i = 0; i < survey.n(); ++i) {
      rows.push_back({std::to_string(i + 1),
                      std::to_string(survey.domains()[static_cast<std::size_t>(i)]),
                      format_short(survey.outcomes()[static_cast<std::size_t>(i)]),
                      format_short(mu_hat[static_cast<std::size_t>(i)]),
                      format_short(summary.pearson[static_cast<std::size_t>(i)])});
    }
    write_table_csv((common.out / "pearson_residuals.csv").string(),
                    {"row", "domain_id", "y", "mu_hat", "pearson"}, rows, header);
  }
  {
    // Fixed-width histogram bins over the residual range.
    std::vector<double> sorted = summary.pearson;
    std::sort(sorted.begin(), sorted.end());
    const double lo = sorted.front(), hi = sorted.back();
    const int bins = 30;
    const double width = hi > lo ? (hi - lo) / bins : 1.0;
    std::vector<int> counts(static_cast<std::size_t>(bins), 0);
    for (double r : summary.pearson) {
      int b = static_cast<int>((r - lo) / width);
      b = std::clamp(b, 0, bins - 1);
      ++counts[static_cast<std::size_t>(b)];
    }
    std::vector<std::vector<std::string>> rows;
    for (int b = 0; b < bins; ++b) {
      rows.push_back({format_short(lo + b * width), format_short(lo + (b + 1) * width),
                      std::to_string(counts[static_cast<std::size_t>(b)])});
    }
    write_table_csv((common.out / "pearson_histogram.csv").string(), {"bin_lo", "bin_hi", "count"},
                    rows, header);
  }
  {
    // Per-domain five-number summaries (boxplot data).
    std::vector<std::vector<std::string>> rows;
    for (std::int64_t id : survey.index().ids()) {
      std::vector<double> vals;
      for (int r : survey.index().rows(id)) vals.push_back(summary.pearson[static_cast<std::size_t>(r)]);
      std::sort(vals.begin(), vals.end());
      rows.push_back({std::to_string(id), std::to_string(vals.size()),
                      format_short(vals.front()), format_short(quantile_sorted(vals, 0.25)),
                      format_short(quantile_sorted(vals, 0.5)),
                      format_short(quantile_sorted(vals, 0.75)), format_short(vals.back())});
    }
    write_table_csv((common.out / "pearson_by_domain.csv").string(),
                    {"domain_id", "n", "min", "q1", "median", "q3", "max"}, rows, header);
  }

  json out{{"seed", common.seed},
           {"n", survey.n()},
           {"in_sample_domains", n_domains},
           {"residual_df", summary.residual_df},
           {"dispersion_ratio", summary.ratio},
           {"dean_pb_statistic", summary.dean_statistic},
           {"dean_pb_p_value", summary.dean_p_value}};
  write_text(common.out / "diagnostics.json", out.dump(2) + "\n");
  return kExitOk;
}

int cmd_diagnose(const CommonConfig& common) {
  const json& cfg = common.raw;
  check_keys(cfg, {"fit", "survey", "schema", "seed", "threads", "out"}, "diagnose config");
  const std::string text = read_text(cfg.at("fit").get<std::string>());
  const std::string method = artifact_method(text);

  CsvSchema schema = schema_from_config(cfg, /*outcome_required=*/true);
  std::vector<double> mu_hat;

  if (method == "ebpp") {
    const GlmmFit fit = deserialize_glmm(text);
    schema.covariate_cols = fit.covariate_names;
    const Sample survey = load_sample_csv(cfg.at("survey").get<std::string>(), schema);
    mu_hat.resize(static_cast<std::size_t>(survey.n()));
    for (int i = 0; i < survey.n(); ++i) {
      mu_hat[static_cast<std::size_t>(i)] = glmm_unit_mean(
          fit, survey.covariates().row(i), survey.domains()[static_cast<std::size_t>(i)]);
    }
    return write_diagnostics(common, survey, mu_hat);
  }
  if (method == "gmerf") {
    const GmerfFit fit = deserialize_gmerf(text);
    schema.covariate_cols = fit.covariate_names;
    const Sample survey = load_sample_csv(cfg.at("survey").get<std::string>(), schema);
    mu_hat.resize(static_cast<std::size_t>(survey.n()));
    for (int i = 0; i < survey.n(); ++i) {
      mu_hat[static_cast<std::size_t>(i)] =
          predict_unit_gmerf(fit, survey.covariates().row(i),
                             survey.domains()[static_cast<std::size_t>(i)])
              .second;
    }
    return write_diagnostics(common, survey, mu_hat);
  }
  const MerfFit fit = deserialize_merf(text);
  schema.covariate_cols = fit.covariate_names;
  const Sample survey = load_sample_csv(cfg.at("survey").get<std::string>(), schema);
  mu_hat.resize(static_cast<std::size_t>(survey.n()));
  for (int i = 0; i < survey.n(); ++i) {
    mu_hat[static_cast<std::size_t>(i)] = predict_unit_merf(
        fit, survey.covariates().row(i), survey.domains()[static_cast<std::size_t>(i)]);
  }
  return write_diagnostics(common, survey, mu_hat);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"saecount: small area estimation for count outcomes"};
  app.require_subcommand(1);

  std::string config_path, out_flag;
  std::uint64_t seed_flag = 0;
  int threads_flag = 0;
  bool seed_set = false, threads_set = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file")->required();
    sub->add_option("--seed", seed_flag, "Top-level seed (overrides config)")
        ->each([&](const std::string&) { seed_set = true; });
    sub->add_option("--threads", threads_flag, "Worker thread cap (overrides config)")
        ->each([&](const std::string&) { threads_set = true; });
    sub->add_option("--out", out_flag, "Output directory (overrides config)");
  };

  CLI::App* fit = app.add_subcommand("fit", "Fit gmerf|merf|ebpp on survey data");
  CLI::App* predict = app.add_subcommand("predict", "Domain means from a fit artifact and census");
  CLI::App* mse = app.add_subcommand("mse", "Bootstrap MSE estimates for a fit");
  CLI::App* simulate = app.add_subcommand("simulate", "Model- or design-based simulation study");
  CLI::App* diagnose = app.add_subcommand("diagnose", "Overdispersion diagnostics for a fit");
  for (CLI::App* sub : {fit, predict, mse, simulate, diagnose}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    const json cfg = load_config(config_path);
    const CommonConfig common =
        parse_common(cfg, seed_flag, seed_set, threads_flag, threads_set, out_flag);
    if (fit->parsed()) return cmd_fit(common);
    if (predict->parsed()) return cmd_predict(common);
    if (mse->parsed()) return cmd_mse(common);
    if (simulate->parsed()) return cmd_simulate(common);
    if (diagnose->parsed()) return cmd_diagnose(common);
    return kExitValidation;
  } catch (const io_error& e) {
    log_event(LogLevel::error, "io_error", {{"message", e.what()}});
    return kExitIo;
  } catch (const std::exception& e) {
    log_event(LogLevel::error, "validation_error", {{"message", e.what()}});
    return kExitValidation;
  }
}
