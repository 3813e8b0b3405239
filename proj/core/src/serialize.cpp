#include "saecount/serialize.hpp"

#include <json.hpp>

#include "saecount/errors.hpp"
#include "saecount/forest.hpp"

namespace saecount {

namespace {

using nlohmann::json;

constexpr int kArtifactVersion = 1;

json forest_params_to_json(const ForestParams& p) {
  return json{{"num_trees", p.num_trees},
              {"mtry", p.mtry},
              {"min_node_size", p.min_node_size},
              {"bootstrap", p.bootstrap}};
}

ForestParams forest_params_from_json(const json& j) {
  ForestParams p;
  p.num_trees = j.at("num_trees").get<int>();
  p.mtry = j.at("mtry").get<int>();
  p.min_node_size = j.at("min_node_size").get<int>();
  p.bootstrap = j.at("bootstrap").get<bool>();
  return p;
}

json forest_to_json_obj(const Forest& forest) {
  json trees = json::array();
  for (const auto& tree : forest.trees()) {
    json nodes = json::array();
    for (const auto& n : tree) {
      nodes.push_back(json::array({n.feature, n.threshold, n.left, n.right, n.value}));
    }
    trees.push_back(std::move(nodes));
  }
  json importance = json::array();
  const Eigen::VectorXd imp = forest.variable_importance();
  for (int j = 0; j < imp.size(); ++j) importance.push_back(imp(j));
  return json{{"format", "saecount-forest"},
              {"version", kArtifactVersion},
              {"p", forest.num_features()},
              {"params", forest_params_to_json(forest.params())},
              {"importance", std::move(importance)},
              {"trees", std::move(trees)}};
}

Forest forest_from_json_obj(const json& j) {
  if (j.at("format").get<std::string>() != "saecount-forest") {
    throw validation_error("not a forest artifact");
  }
  if (j.at("version").get<int>() != kArtifactVersion) {
    throw validation_error("unsupported forest artifact version");
  }
  const int p = j.at("p").get<int>();
  std::vector<std::vector<TreeNode>> trees;
  for (const auto& tj : j.at("trees")) {
    std::vector<TreeNode> nodes;
    nodes.reserve(tj.size());
    for (const auto& nj : tj) {
      TreeNode n;
      n.feature = nj.at(0).get<int>();
      n.threshold = nj.at(1).get<double>();
      n.left = nj.at(2).get<int>();
      n.right = nj.at(3).get<int>();
      n.value = nj.at(4).get<double>();
      nodes.push_back(n);
    }
    trees.push_back(std::move(nodes));
  }
  Eigen::VectorXd importance(p);
  const auto& ij = j.at("importance");
  for (int k = 0; k < p; ++k) importance(k) = ij.at(static_cast<std::size_t>(k)).get<double>();
  return forest_from_parts(forest_params_from_json(j.at("params")), p, std::move(trees),
                           std::move(importance));
}

json re_to_json(const RandomEffects& re) {
  json out = json::array();
  for (std::size_t i = 0; i < re.domains().size(); ++i) {
    out.push_back(json::array({re.domains()[i], re.values()[i]}));
  }
  return out;
}

RandomEffects re_from_json(const json& j) {
  std::vector<std::int64_t> ids;
  std::vector<double> nu;
  for (const auto& e : j) {
    ids.push_back(e.at(0).get<std::int64_t>());
    nu.push_back(e.at(1).get<double>());
  }
  return RandomEffects(std::move(ids), std::move(nu));
}

json sizes_to_json(const std::map<std::int64_t, int>& sizes) {
  json out = json::array();
  for (const auto& [id, n] : sizes) out.push_back(json::array({id, n}));
  return out;
}

std::map<std::int64_t, int> sizes_from_json(const json& j) {
  std::map<std::int64_t, int> out;
  for (const auto& e : j) out[e.at(0).get<std::int64_t>()] = e.at(1).get<int>();
  return out;
}

json fit_envelope(const std::string& method) {
  return json{{"format", "saecount-fit"}, {"version", kArtifactVersion}, {"method", method}};
}

json parse_envelope(std::string_view text, const std::string& expected_method) {
  json j = json::parse(text);
  if (!j.is_object() || j.value("format", "") != "saecount-fit") {
    throw validation_error("not a saecount fit artifact");
  }
  if (j.at("version").get<int>() != kArtifactVersion) {
    throw validation_error("unsupported fit artifact version");
  }
  if (!expected_method.empty() && j.at("method").get<std::string>() != expected_method) {
    throw validation_error("artifact holds a '" + j.at("method").get<std::string>() +
                           "' fit, expected '" + expected_method + "'");
  }
  return j;
}

}  // namespace

std::string Forest::to_json() const { return forest_to_json_obj(*this).dump(); }

Forest Forest::from_json(std::string_view text) {
  return forest_from_json_obj(json::parse(text));
}

std::string serialize_fit(const GmerfFit& fit) {
  json j = fit_envelope("gmerf");
  j["covariates"] = fit.covariate_names;
  j["sample_sizes"] = sizes_to_json(fit.sample_sizes);
  j["vc"] = {{"sigma2_nu", fit.vc.sigma2_nu}, {"sigma2_eps", fit.vc.sigma2_eps}};
  j["re"] = re_to_json(fit.re);
  j["forest"] = forest_to_json_obj(fit.forest);
  j["macro_changes"] = fit.macro_changes;
  j["micro_logliks"] = fit.micro_logliks;
  j["macro_converged"] = fit.macro_converged;
  j["micro_converged"] = fit.micro_converged;
  j["macro_iterations"] = fit.macro_iterations;
  j["tolerances"] = {{"micro_tol", fit.params.micro_tol},
                     {"macro_tol", fit.params.macro_tol},
                     {"max_macro", fit.params.max_macro},
                     {"max_micro", fit.params.max_micro}};
  return j.dump();
}

std::string serialize_fit(const MerfFit& fit) {
  json j = fit_envelope("merf");
  j["covariates"] = fit.covariate_names;
  j["sample_sizes"] = sizes_to_json(fit.sample_sizes);
  j["vc"] = {{"sigma2_nu", fit.vc.sigma2_nu}, {"sigma2_eps", fit.vc.sigma2_eps}};
  j["re"] = re_to_json(fit.re);
  j["forest"] = forest_to_json_obj(fit.forest);
  j["trace"] = fit.trace;
  j["converged"] = fit.converged;
  j["iterations"] = fit.iterations;
  j["tolerances"] = {{"tol", fit.params.tol}, {"max_iter", fit.params.max_iter}};
  return j.dump();
}

std::string serialize_fit(const GlmmFit& fit) {
  json j = fit_envelope("ebpp");
  j["covariates"] = fit.covariate_names;
  j["sample_sizes"] = sizes_to_json(fit.sample_sizes);
  j["vc"] = {{"sigma2_nu", fit.vc.sigma2_nu}, {"sigma2_eps", fit.vc.sigma2_eps}};
  j["re"] = re_to_json(fit.re);
  json beta = json::array();
  for (int k = 0; k < fit.beta.size(); ++k) beta.push_back(fit.beta(k));
  j["beta"] = std::move(beta);
  j["converged"] = fit.converged;
  j["iterations"] = fit.iterations;
  return j.dump();
}

GmerfFit deserialize_gmerf(std::string_view text) {
  const json j = parse_envelope(text, "gmerf");
  GmerfFit fit;
  fit.covariate_names = j.at("covariates").get<std::vector<std::string>>();
  fit.sample_sizes = sizes_from_json(j.at("sample_sizes"));
  fit.vc.sigma2_nu = j.at("vc").at("sigma2_nu").get<double>();
  fit.vc.sigma2_eps = j.at("vc").at("sigma2_eps").get<double>();
  fit.re = re_from_json(j.at("re"));
  fit.forest = forest_from_json_obj(j.at("forest"));
  fit.macro_changes = j.at("macro_changes").get<std::vector<double>>();
  fit.micro_logliks = j.at("micro_logliks").get<std::vector<std::vector<double>>>();
  fit.macro_converged = j.at("macro_converged").get<bool>();
  fit.micro_converged = j.at("micro_converged").get<std::vector<bool>>();
  fit.macro_iterations = j.at("macro_iterations").get<int>();
  fit.params.forest = fit.forest.params();
  fit.params.micro_tol = j.at("tolerances").at("micro_tol").get<double>();
  fit.params.macro_tol = j.at("tolerances").at("macro_tol").get<double>();
  fit.params.max_macro = j.at("tolerances").at("max_macro").get<int>();
  fit.params.max_micro = j.at("tolerances").at("max_micro").get<int>();
  return fit;
}

MerfFit deserialize_merf(std::string_view text) {
  const json j = parse_envelope(text, "merf");
  MerfFit fit;
  fit.covariate_names = j.at("covariates").get<std::vector<std::string>>();
  fit.sample_sizes = sizes_from_json(j.at("sample_sizes"));
  fit.vc.sigma2_nu = j.at("vc").at("sigma2_nu").get<double>();
  fit.vc.sigma2_eps = j.at("vc").at("sigma2_eps").get<double>();
  fit.re = re_from_json(j.at("re"));
  fit.forest = forest_from_json_obj(j.at("forest"));
  fit.trace = j.at("trace").get<std::vector<double>>();
  fit.converged = j.at("converged").get<bool>();
  fit.iterations = j.at("iterations").get<int>();
  fit.params.forest = fit.forest.params();
  fit.params.tol = j.at("tolerances").at("tol").get<double>();
  fit.params.max_iter = j.at("tolerances").at("max_iter").get<int>();
  return fit;
}

GlmmFit deserialize_glmm(std::string_view text) {
  const json j = parse_envelope(text, "ebpp");
  GlmmFit fit;
  fit.covariate_names = j.at("covariates").get<std::vector<std::string>>();
  fit.sample_sizes = sizes_from_json(j.at("sample_sizes"));
  fit.vc.sigma2_nu = j.at("vc").at("sigma2_nu").get<double>();
  fit.vc.sigma2_eps = j.at("vc").at("sigma2_eps").get<double>();
  fit.re = re_from_json(j.at("re"));
  const auto& bj = j.at("beta");
  fit.beta.resize(static_cast<Eigen::Index>(bj.size()));
  for (std::size_t k = 0; k < bj.size(); ++k) {
    fit.beta(static_cast<Eigen::Index>(k)) = bj.at(k).get<double>();
  }
  fit.converged = j.at("converged").get<bool>();
  fit.iterations = j.at("iterations").get<int>();
  return fit;
}

std::string artifact_method(std::string_view text) {
  const json j = parse_envelope(text, "");
  return j.at("method").get<std::string>();
}

}  // namespace saecount
