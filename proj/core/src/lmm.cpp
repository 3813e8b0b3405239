#include "saecount/lmm.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>

#include "saecount/errors.hpp"

namespace saecount {

namespace {

constexpr double kVarFloor = 1e-12;
constexpr double kLog2Pi = 1.8378770664093453;

// Per-domain sufficient statistics of the weighted residuals.
struct DomainSuff {
  std::int64_t id = 0;
  int n = 0;
  double sw = 0.0;    // sum w
  double swr = 0.0;   // sum w r
  double swr2 = 0.0;  // sum w r^2
  double slogw = 0.0; // sum log w
};

std::vector<DomainSuff> accumulate(std::span<const double> target, std::span<const double> offset,
                                   std::span<const double> weights,
                                   std::span<const std::int64_t> domains) {
  const std::size_t n = target.size();
  if (offset.size() != n || weights.size() != n || domains.size() != n) {
    throw validation_error("fit_intercept_lmm: input lengths differ");
  }
  std::map<std::int64_t, DomainSuff> acc;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = weights[i];
    if (!(w > 0.0) || !std::isfinite(w)) {
      throw validation_error("fit_intercept_lmm: weights must be positive and finite");
    }
    const double r = target[i] - offset[i];
    if (!std::isfinite(r)) throw validation_error("fit_intercept_lmm: non-finite residual");
    DomainSuff& d = acc[domains[i]];
    d.id = domains[i];
    d.n += 1;
    d.sw += w;
    d.swr += w * r;
    d.swr2 += w * r * r;
    d.slogw += std::log(w);
  }
  std::vector<DomainSuff> out;
  out.reserve(acc.size());
  for (auto& [id, d] : acc) out.push_back(d);
  return out;
}

// Marginal log-likelihood from the sufficient statistics; variances are
// floored at kVarFloor to keep the evaluation finite on degenerate data.
double loglik_from_suff(const std::vector<DomainSuff>& suff, double s_nu, double s_eps) {
  const double a = std::max(s_eps, kVarFloor);
  const double c = std::max(s_nu, 0.0);
  double ll = 0.0;
  for (const auto& d : suff) {
    const double swa = d.sw / a;
    const double denom = 1.0 + c * swa;
    const double logdet = d.n * std::log(a) - d.slogw + std::log(denom);
    const double quad = d.swr2 / a - c * (d.swr / a) * (d.swr / a) / denom;
    ll += -0.5 * (d.n * kLog2Pi + logdet + quad);
  }
  return ll;
}

struct MlResult {
  double log_nu = 0.0;
  double log_eps = 0.0;
  double loglik = -std::numeric_limits<double>::infinity();
};

double clamp_log_var(double x) { return std::clamp(x, std::log(kVarFloor), std::log(1e12)); }

// Nelder-Mead on (log sigma2_nu, log sigma2_eps).
MlResult nelder_mead(const std::vector<DomainSuff>& suff, double log_nu0, double log_eps0) {
  auto eval = [&](double ln, double le) {
    return loglik_from_suff(suff, std::exp(clamp_log_var(ln)), std::exp(clamp_log_var(le)));
  };
  struct Vertex {
    double x0, x1, f;
  };
  std::array<Vertex, 3> simplex{{{log_nu0, log_eps0, 0.0},
                                 {log_nu0 + 1.0, log_eps0, 0.0},
                                 {log_nu0, log_eps0 + 1.0, 0.0}}};
  for (auto& v : simplex) v.f = eval(v.x0, v.x1);
  auto order = [&]() {
    std::sort(simplex.begin(), simplex.end(), [](const Vertex& a, const Vertex& b) { return a.f > b.f; });
  };
  order();
  for (int iter = 0; iter < 400; ++iter) {
    if (std::fabs(simplex[0].f - simplex[2].f) < 1e-12 &&
        std::fabs(simplex[0].x0 - simplex[2].x0) + std::fabs(simplex[0].x1 - simplex[2].x1) < 1e-10) {
      break;
    }
    const double cx0 = 0.5 * (simplex[0].x0 + simplex[1].x0);
    const double cx1 = 0.5 * (simplex[0].x1 + simplex[1].x1);
    Vertex refl{cx0 + (cx0 - simplex[2].x0), cx1 + (cx1 - simplex[2].x1), 0.0};
    refl.f = eval(refl.x0, refl.x1);
    if (refl.f > simplex[0].f) {
      Vertex exp_v{cx0 + 2.0 * (cx0 - simplex[2].x0), cx1 + 2.0 * (cx1 - simplex[2].x1), 0.0};
      exp_v.f = eval(exp_v.x0, exp_v.x1);
      simplex[2] = exp_v.f > refl.f ? exp_v : refl;
    } else if (refl.f > simplex[1].f) {
      simplex[2] = refl;
    } else {
      Vertex contr{cx0 + 0.5 * (simplex[2].x0 - cx0), cx1 + 0.5 * (simplex[2].x1 - cx1), 0.0};
      contr.f = eval(contr.x0, contr.x1);
      if (contr.f > simplex[2].f) {
        simplex[2] = contr;
      } else {
        for (int k = 1; k < 3; ++k) {
          simplex[static_cast<std::size_t>(k)].x0 =
              0.5 * (simplex[static_cast<std::size_t>(k)].x0 + simplex[0].x0);
          simplex[static_cast<std::size_t>(k)].x1 =
              0.5 * (simplex[static_cast<std::size_t>(k)].x1 + simplex[0].x1);
          simplex[static_cast<std::size_t>(k)].f =
              eval(simplex[static_cast<std::size_t>(k)].x0, simplex[static_cast<std::size_t>(k)].x1);
        }
      }
    }
    order();
  }
  return {clamp_log_var(simplex[0].x0), clamp_log_var(simplex[0].x1), simplex[0].f};
}

// Profile likelihood in gamma = sigma2_nu / sigma2_eps: the level-1 variance
// has the closed form a(gamma) = Q(gamma) / n, leaving a 1-d search.
MlResult golden_profile(const std::vector<DomainSuff>& suff, int n_total) {
  auto profile = [&](double log_gamma) -> std::pair<double, double> {
    const double g = std::exp(log_gamma);
    double q = 0.0, logdet_part = 0.0;
    for (const auto& d : suff) {
      const double denom = 1.0 + g * d.sw;
      q += d.swr2 - g * d.swr * d.swr / denom;
      logdet_part += std::log(denom) - d.slogw;
    }
    const double a = std::max(q / std::max(1, n_total), kVarFloor);
    const double ll = -0.5 * (n_total * kLog2Pi + n_total * std::log(a) + logdet_part +
                              q / a);
    return {ll, a};
  };
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double lo = std::log(1e-14), hi = std::log(1e14);
  double x1 = hi - phi * (hi - lo), x2 = lo + phi * (hi - lo);
  double f1 = profile(x1).first, f2 = profile(x2).first;
  for (int iter = 0; iter < 200; ++iter) {
    if (f1 > f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - phi * (hi - lo);
      f1 = profile(x1).first;
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + phi * (hi - lo);
      f2 = profile(x2).first;
    }
    if (hi - lo < 1e-11) break;
  }
  const double log_gamma = 0.5 * (lo + hi);
  const auto [ll, a] = profile(log_gamma);
  return {clamp_log_var(log_gamma + std::log(a)), clamp_log_var(std::log(a)), ll};
}

}  // namespace

RandomEffects::RandomEffects(std::vector<std::int64_t> domains, std::vector<double> nu)
    : domains_(std::move(domains)), nu_(std::move(nu)) {
  if (domains_.size() != nu_.size()) {
    throw validation_error("RandomEffects: domain/value length mismatch");
  }
  pos_.reserve(domains_.size());
  for (int i = 0; i < static_cast<int>(domains_.size()); ++i) pos_[domains_[static_cast<std::size_t>(i)]] = i;
}

double RandomEffects::at(std::int64_t domain) const {
  auto it = pos_.find(domain);
  return it == pos_.end() ? 0.0 : nu_[static_cast<std::size_t>(it->second)];
}

LmmFit fit_intercept_lmm(std::span<const double> target, std::span<const double> offset,
                         std::span<const double> weights,
                         std::span<const std::int64_t> domains) {
  if (target.empty()) throw validation_error("fit_intercept_lmm: empty input");
  const auto suff = accumulate(target, offset, weights, domains);
  const int n_total = static_cast<int>(target.size());

  double total_swr2 = 0.0;
  for (const auto& d : suff) total_swr2 += d.swr2;

  LmmFit fit;
  std::vector<std::int64_t> ids;
  ids.reserve(suff.size());
  for (const auto& d : suff) ids.push_back(d.id);

  if (total_swr2 <= 0.0) {
    // Perfect fit: both components degenerate to zero. The reported
    // log-likelihood is the floored-variance evaluation, kept finite so
    // iteration monitors stay well defined.
    fit.vc = {0.0, 0.0};
    fit.re = RandomEffects(std::move(ids), std::vector<double>(suff.size(), 0.0));
    fit.loglik = loglik_from_suff(suff, 0.0, kVarFloor);
    fit.converged = true;
    return fit;
  }

  // Method-of-moments start: within/between split of the weighted residuals.
  double within_ss = 0.0;
  int within_df = 0;
  double grand_sw = 0.0, grand_swr = 0.0;
  for (const auto& d : suff) {
    within_ss += d.swr2 - d.swr * d.swr / d.sw;
    within_df += d.n - 1;
    grand_sw += d.sw;
    grand_swr += d.swr;
  }
  const double grand_mean = grand_swr / grand_sw;
  double between = 0.0;
  for (const auto& d : suff) {
    const double dm = d.swr / d.sw - grand_mean;
    between += dm * dm;
  }
  between /= std::max<std::size_t>(1, suff.size());
  const double eps0 = std::max(within_df > 0 ? within_ss / within_df : total_swr2 / n_total, 1e-8);
  const double mean_n = static_cast<double>(n_total) / static_cast<double>(suff.size());
  const double nu0 = std::max(between - eps0 / mean_n, 1e-8);

  MlResult nm = nelder_mead(suff, std::log(nu0), std::log(eps0));
  MlResult gp = golden_profile(suff, n_total);
  const MlResult best = (gp.loglik > nm.loglik || !std::isfinite(nm.loglik)) ? gp : nm;

  double s_nu = std::exp(best.log_nu);
  double s_eps = std::exp(best.log_eps);
  if (s_nu <= kVarFloor * 1.0001) s_nu = 0.0;
  if (s_eps <= kVarFloor * 1.0001) s_eps = 0.0;
  fit.vc = {s_nu, s_eps};

  std::vector<double> nu(suff.size(), 0.0);
  if (s_nu > 0.0) {
    const double a = std::max(s_eps, kVarFloor);
    for (std::size_t i = 0; i < suff.size(); ++i) {
      nu[i] = (suff[i].swr / a) / (1.0 / s_nu + suff[i].sw / a);
    }
  }
  fit.re = RandomEffects(std::move(ids), std::move(nu));
  fit.loglik = loglik_from_suff(suff, s_nu, s_eps);
  fit.converged = std::isfinite(fit.loglik);
  return fit;
}

double blup_predict(const VarianceComponents& vc, const RandomEffects& re, std::int64_t domain) {
  if (vc.sigma2_nu <= 0.0) return 0.0;
  return re.at(domain);
}

namespace {

// GLS intercept for given variance components, from the same statistics:
// alpha = sum_i 1'S_i^-1 r_i / sum_i 1'S_i^-1 1 with the rank-one inverse.
double profiled_mean(const std::vector<DomainSuff>& suff, double s_nu, double s_eps) {
  const double a = std::max(s_eps, kVarFloor);
  const double c = std::max(s_nu, 0.0);
  double num = 0.0, den = 0.0;
  for (const auto& d : suff) {
    const double denom = 1.0 + c * d.sw / a;
    num += (d.swr / a) / denom;
    den += (d.sw / a) / denom;
  }
  return den > 0.0 ? num / den : 0.0;
}

double loglik_with_mean(const std::vector<DomainSuff>& suff, double s_nu, double s_eps) {
  const double alpha = profiled_mean(suff, s_nu, s_eps);
  std::vector<DomainSuff> adjusted = suff;
  for (auto& d : adjusted) {
    const double swr = d.swr - alpha * d.sw;
    const double swr2 = d.swr2 - 2.0 * alpha * d.swr + alpha * alpha * d.sw;
    d.swr = swr;
    d.swr2 = swr2;
  }
  return loglik_from_suff(adjusted, s_nu, s_eps);
}

}  // namespace

LmmMeanFit fit_intercept_lmm_with_mean(std::span<const double> target,
                                       std::span<const double> offset,
                                       std::span<const double> weights,
                                       std::span<const std::int64_t> domains) {
  if (target.empty()) throw validation_error("fit_intercept_lmm_with_mean: empty input");
  const auto suff = accumulate(target, offset, weights, domains);
  const int n_total = static_cast<int>(target.size());

  std::vector<std::int64_t> ids;
  ids.reserve(suff.size());
  for (const auto& d : suff) ids.push_back(d.id);

  // Centered residual second moment decides degeneracy.
  double grand_sw = 0.0, grand_swr = 0.0;
  for (const auto& d : suff) {
    grand_sw += d.sw;
    grand_swr += d.swr;
  }
  const double grand_mean = grand_swr / grand_sw;
  double centered_ss = 0.0;
  for (const auto& d : suff) {
    centered_ss += d.swr2 - 2.0 * grand_mean * d.swr + grand_mean * grand_mean * d.sw;
  }

  LmmMeanFit fit;
  if (centered_ss <= 1e-300) {
    fit.mean = grand_mean;
    fit.vc = {0.0, 0.0};
    fit.re = RandomEffects(std::move(ids), std::vector<double>(suff.size(), 0.0));
    std::vector<DomainSuff> adjusted = suff;
    for (auto& d : adjusted) {
      d.swr = 0.0;
      d.swr2 = 0.0;
    }
    fit.loglik = loglik_from_suff(adjusted, 0.0, kVarFloor);
    fit.converged = true;
    return fit;
  }

  // ML over the log variances with the mean profiled inside the objective.
  double within_ss = 0.0;
  int within_df = 0;
  for (const auto& d : suff) {
    within_ss += d.swr2 - d.swr * d.swr / d.sw;
    within_df += d.n - 1;
  }
  double between = 0.0;
  for (const auto& d : suff) {
    const double dm = d.swr / d.sw - grand_mean;
    between += dm * dm;
  }
  between /= std::max<std::size_t>(1, suff.size());
  const double eps0 = std::max(within_df > 0 ? within_ss / within_df : centered_ss / n_total, 1e-8);
  const double mean_n = static_cast<double>(n_total) / static_cast<double>(suff.size());
  const double nu0 = std::max(between - eps0 / mean_n, 1e-8);

  auto eval = [&](double log_nu, double log_eps) {
    return loglik_with_mean(suff, std::exp(clamp_log_var(log_nu)), std::exp(clamp_log_var(log_eps)));
  };
  // Nelder-Mead as in the zero-mean fitter.
  struct Vertex {
    double x0, x1, f;
  };
  std::array<Vertex, 3> simplex{{{std::log(nu0), std::log(eps0), 0.0},
                                 {std::log(nu0) + 1.0, std::log(eps0), 0.0},
                                 {std::log(nu0), std::log(eps0) + 1.0, 0.0}}};
  for (auto& v : simplex) v.f = eval(v.x0, v.x1);
  auto order = [&]() {
    std::sort(simplex.begin(), simplex.end(), [](const Vertex& a, const Vertex& b) { return a.f > b.f; });
  };
  order();
  for (int iter = 0; iter < 400; ++iter) {
    if (std::fabs(simplex[0].f - simplex[2].f) < 1e-12 &&
        std::fabs(simplex[0].x0 - simplex[2].x0) + std::fabs(simplex[0].x1 - simplex[2].x1) < 1e-10) {
      break;
    }
    const double cx0 = 0.5 * (simplex[0].x0 + simplex[1].x0);
    const double cx1 = 0.5 * (simplex[0].x1 + simplex[1].x1);
    Vertex refl{cx0 + (cx0 - simplex[2].x0), cx1 + (cx1 - simplex[2].x1), 0.0};
    refl.f = eval(refl.x0, refl.x1);
    if (refl.f > simplex[0].f) {
      Vertex exp_v{cx0 + 2.0 * (cx0 - simplex[2].x0), cx1 + 2.0 * (cx1 - simplex[2].x1), 0.0};
      exp_v.f = eval(exp_v.x0, exp_v.x1);
      simplex[2] = exp_v.f > refl.f ? exp_v : refl;
    } else if (refl.f > simplex[1].f) {
      simplex[2] = refl;
    } else {
      Vertex contr{cx0 + 0.5 * (simplex[2].x0 - cx0), cx1 + 0.5 * (simplex[2].x1 - cx1), 0.0};
      contr.f = eval(contr.x0, contr.x1);
      if (contr.f > simplex[2].f) {
        simplex[2] = contr;
      } else {
        for (int k = 1; k < 3; ++k) {
          simplex[static_cast<std::size_t>(k)].x0 =
              0.5 * (simplex[static_cast<std::size_t>(k)].x0 + simplex[0].x0);
          simplex[static_cast<std::size_t>(k)].x1 =
              0.5 * (simplex[static_cast<std::size_t>(k)].x1 + simplex[0].x1);
          simplex[static_cast<std::size_t>(k)].f =
              eval(simplex[static_cast<std::size_t>(k)].x0, simplex[static_cast<std::size_t>(k)].x1);
        }
      }
    }
    order();
  }

  double s_nu = std::exp(clamp_log_var(simplex[0].x0));
  double s_eps = std::exp(clamp_log_var(simplex[0].x1));
  if (s_nu <= kVarFloor * 1.0001) s_nu = 0.0;
  if (s_eps <= kVarFloor * 1.0001) s_eps = 0.0;

  fit.mean = profiled_mean(suff, s_nu, s_eps);
  fit.vc = {s_nu, s_eps};
  std::vector<double> nu(suff.size(), 0.0);
  if (s_nu > 0.0) {
    const double a = std::max(s_eps, kVarFloor);
    for (std::size_t i = 0; i < suff.size(); ++i) {
      const double swr_adj = suff[i].swr - fit.mean * suff[i].sw;
      nu[i] = (swr_adj / a) / (1.0 / s_nu + suff[i].sw / a);
    }
  }
  fit.re = RandomEffects(std::move(ids), std::move(nu));
  fit.loglik = loglik_with_mean(suff, s_nu, s_eps);
  fit.converged = std::isfinite(fit.loglik);
  return fit;
}

double marginal_loglik(const VarianceComponents& vc, std::span<const double> target,
                       std::span<const double> offset, std::span<const double> weights,
                       std::span<const std::int64_t> domains) {
  if (!(vc.sigma2_nu >= 0.0) || !(vc.sigma2_eps >= 0.0)) {
    throw validation_error("marginal_loglik: variance components must be nonnegative");
  }
  const auto suff = accumulate(target, offset, weights, domains);
  if (vc.sigma2_eps <= 0.0) {
    double total = 0.0;
    for (const auto& d : suff) total += d.swr2;
    if (total > 0.0) {
      throw validation_error("marginal_loglik: sigma2_eps = 0 with nonzero residuals");
    }
  }
  return loglik_from_suff(suff, vc.sigma2_nu, vc.sigma2_eps);
}

}  // namespace saecount
