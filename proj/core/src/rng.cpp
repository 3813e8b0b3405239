#include "saecount/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "saecount/errors.hpp"

namespace saecount {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(a) ^ (0x9e3779b97f4a7c15ULL + b));
}

constexpr double kLogSqrt2Pi = 0.91893853320467274178;

}  // namespace

RngHandle::RngHandle(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream), engine_(mix(seed, stream)) {}

RngHandle RngHandle::split(std::uint64_t child) const {
  return RngHandle(seed_, mix(stream_, child));
}

double RngHandle::uniform01() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::uint64_t RngHandle::bounded(std::uint64_t n) {
  if (n == 0) throw validation_error("bounded(0) is undefined");
  const std::uint64_t threshold = (0ULL - n) % n;
  for (;;) {
    const std::uint64_t r = engine_();
    if (r >= threshold) return r % n;
  }
}

double sample_normal(RngHandle& rng, double mean, double sd) {
  if (!(sd >= 0.0)) throw validation_error("sample_normal: sd must be >= 0");
  // Box-Muller; u1 shifted into (0, 1].
  const double u1 = 1.0 - rng.uniform01();
  const double u2 = rng.uniform01();
  const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  return mean + sd * z;
}

double sample_uniform(RngHandle& rng, double lo, double hi) {
  if (!(lo <= hi)) throw validation_error("sample_uniform: lo must be <= hi");
  return lo + (hi - lo) * rng.uniform01();
}

double sample_gamma(RngHandle& rng, double shape, double scale) {
  if (!(shape > 0.0) || !(scale > 0.0)) {
    throw validation_error("sample_gamma: shape and scale must be > 0");
  }
  // Marsaglia-Tsang squeeze; shape < 1 boosted via the power trick.
  double boost = 1.0;
  double a = shape;
  if (a < 1.0) {
    const double u = rng.uniform01();
    boost = std::pow(u > 0.0 ? u : std::numeric_limits<double>::min(), 1.0 / a);
    a += 1.0;
  }
  const double d = a - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = sample_normal(rng, 0.0, 1.0);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform01();
    if (u < 1.0 - 0.0331 * x * x * x * x) return boost * d * v * scale;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) {
      return boost * d * v * scale;
    }
  }
}

namespace {

// Inverse-CDF sequential search; only safe for small mu.
double poisson_inversion(RngHandle& rng, double mu) {
  const double u = rng.uniform01();
  double p = std::exp(-mu);
  double cum = p;
  double k = 0.0;
  while (u > cum && k < 4.0e2) {
    k += 1.0;
    p *= mu / k;
    cum += p;
  }
  return k;
}

// Hoermann's PTRD transformed-rejection sampler, exact for mu >= 10.
double poisson_ptrd(RngHandle& rng, double mu) {
  const double smu = std::sqrt(mu);
  const double b = 0.931 + 2.53 * smu;
  const double a = -0.059 + 0.02483 * b;
  const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
  const double vr = 0.9277 - 3.6224 / (b - 2.0);
  for (;;) {
    double u;
    double v = rng.uniform01();
    if (v <= 0.86 * vr) {
      u = v / vr - 0.43;
      return std::floor((2.0 * a / (0.5 - std::fabs(u)) + b) * u + mu + 0.445);
    }
    if (v >= vr) {
      u = rng.uniform01() - 0.5;
    } else {
      u = v / vr - 0.93;
      u = (u < 0.0 ? -0.5 : 0.5) - u;
      v = rng.uniform01() * vr;
    }
    const double us = 0.5 - std::fabs(u);
    if (us < 0.013 && v > us) continue;
    const double k = std::floor((2.0 * a / us + b) * u + mu + 0.445);
    v = v * inv_alpha / (a / (us * us) + b);
    if (k >= 10.0) {
      if (std::log(v * smu) <=
          (k + 0.5) * std::log(mu / k) - mu - kLogSqrt2Pi + k -
              (1.0 / 12.0 - 1.0 / (360.0 * k * k)) / k) {
        return k;
      }
    } else if (k >= 0.0) {
      if (std::log(v) <= k * std::log(mu) - mu - std::lgamma(k + 1.0)) return k;
    }
  }
}

}  // namespace

double sample_poisson_real(RngHandle& rng, double mu) {
  if (!(mu >= 0.0) || !std::isfinite(mu)) {
    throw validation_error("sample_poisson: mu must be finite and >= 0");
  }
  if (mu == 0.0) return 0.0;
  if (mu < 10.0) return poisson_inversion(rng, mu);
  if (mu > 1.0e15) {
    // Normal limit; the relative error is O(mu^-1/2) ~ 3e-8 here, far below
    // double resolution of the count itself.
    return std::max(0.0, std::round(mu + std::sqrt(mu) * sample_normal(rng, 0.0, 1.0)));
  }
  return poisson_ptrd(rng, mu);
}

std::int64_t sample_poisson(RngHandle& rng, double mu) {
  const double k = sample_poisson_real(rng, mu);
  if (k > 9.0e18) throw validation_error("sample_poisson: draw exceeds the integer range");
  return static_cast<std::int64_t>(k);
}

double sample_negbinom_real(RngHandle& rng, double mu, double scale) {
  if (!(mu >= 0.0) || !std::isfinite(mu)) {
    throw validation_error("sample_negbinom: mu must be finite and >= 0");
  }
  if (!(scale > 0.0)) throw validation_error("sample_negbinom: scale must be > 0");
  if (mu == 0.0) return 0.0;
  const double lambda = sample_gamma(rng, scale, mu / scale);
  return sample_poisson_real(rng, lambda);
}

std::int64_t sample_negbinom(RngHandle& rng, double mu, double scale) {
  const double k = sample_negbinom_real(rng, mu, scale);
  if (k > 9.0e18) throw validation_error("sample_negbinom: draw exceeds the integer range");
  return static_cast<std::int64_t>(k);
}

Sample stratified_srswor(RngHandle& rng, const Population& population,
                         const std::map<std::int64_t, int>& plan) {
  if (!population.has_outcome()) {
    throw validation_error("stratified_srswor needs population outcomes");
  }
  for (const auto& [id, n_i] : plan) {
    if (n_i < 0) throw validation_error("plan has negative n_i for domain " + std::to_string(id));
    if (n_i > population.domain_size(id)) {
      throw validation_error("plan n_i = " + std::to_string(n_i) + " exceeds N_i = " +
                             std::to_string(population.domain_size(id)) + " in domain " +
                             std::to_string(id));
    }
  }

  std::vector<int> picked;
  for (std::int64_t id : population.index().ids()) {
    auto it = plan.find(id);
    const int want = it == plan.end() ? 0 : it->second;
    if (want == 0) continue;
    // Ordered selection sampling (one uniform per candidate row) keeps the
    // population row order inside each stratum.
    const auto& rows = population.index().rows(id);
    int need = want;
    int remaining = static_cast<int>(rows.size());
    for (int r : rows) {
      if (need == 0) break;
      if (rng.uniform01() * remaining < need) {
        picked.push_back(r);
        --need;
      }
      --remaining;
    }
  }

  const int m = static_cast<int>(picked.size());
  std::vector<std::int64_t> dom(static_cast<std::size_t>(m));
  std::vector<double> y(static_cast<std::size_t>(m));
  Eigen::MatrixXd x(m, population.p());
  for (int i = 0; i < m; ++i) {
    const int r = picked[static_cast<std::size_t>(i)];
    dom[static_cast<std::size_t>(i)] = population.domains()[static_cast<std::size_t>(r)];
    y[static_cast<std::size_t>(i)] = population.outcomes()[static_cast<std::size_t>(r)];
    x.row(i) = population.covariates().row(r);
  }
  return Sample(std::move(dom), std::move(x), population.covariate_names(), std::move(y));
}

std::vector<double> srswr(RngHandle& rng, std::span<const double> pool, int m) {
  if (m < 0) throw validation_error("srswr: m must be >= 0");
  if (m == 0) return {};
  if (pool.empty()) throw validation_error("srswr: empty pool");
  std::vector<double> out(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    out[static_cast<std::size_t>(i)] = pool[rng.bounded(pool.size())];
  }
  return out;
}

const std::vector<int>& model_based_sample_plan_50() {
  static const std::vector<int> plan = {
      8,  9,  10, 10, 11, 12, 12, 13, 13, 14, 14, 14, 15, 15, 16, 16, 16,
      17, 17, 17, 17, 17, 18, 18, 18, 18, 18, 18, 19, 19, 20, 20, 21, 21,
      21, 22, 22, 22, 23, 23, 23, 24, 24, 25, 25, 26, 26, 27, 28, 29};
  return plan;
}

const std::vector<int>& model_based_sample_plan_20() {
  static const std::vector<int> plan = {8,  10, 12, 13, 14, 15, 16, 17, 17, 18,
                                        18, 19, 20, 21, 22, 23, 24, 25, 27, 29};
  return plan;
}

}  // namespace saecount
