#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <vector>

#include "saecount/data.hpp"

namespace saecount {

// Splittable seeded generator. A handle is identified by (seed, stream);
// identical pairs yield identical draw sequences across runs. Substreams
// for simulation replicate m or bootstrap replicate b are derived with
// split(), so every unit of parallel work owns an independent,
// reconstructible stream.
class RngHandle {
 public:
  explicit RngHandle(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  // Independent child stream; deterministic function of (seed, stream, child).
  RngHandle split(std::uint64_t child) const;

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on [0, 1), 53-bit resolution.
  double uniform01();
  // Uniform integer on [0, n), rejection sampled (no modulo bias).
  std::uint64_t bounded(std::uint64_t n);

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
};

// Distribution samplers. All are hand-rolled on top of uniform01() so that
// sequences do not depend on the standard library's unspecified
// distribution algorithms.
double sample_normal(RngHandle& rng, double mean, double sd);
double sample_uniform(RngHandle& rng, double lo, double hi);
double sample_gamma(RngHandle& rng, double shape, double scale);

std::int64_t sample_poisson(RngHandle& rng, double mu);
// Mean mu, variance mu + mu^2/scale (gamma-Poisson mixture).
std::int64_t sample_negbinom(RngHandle& rng, double mu, double scale);

// Poisson draw returned as a double so that astronomically large means
// (possible in the heavy-tailed simulation scenarios) do not overflow the
// integer type; above 1e15 the exact draw is replaced by its normal limit.
double sample_poisson_real(RngHandle& rng, double mu);
double sample_negbinom_real(RngHandle& rng, double mu, double scale);

// Stratified simple random sampling without replacement, domains as strata.
// Plan entries give n_i per domain (0 allowed: out-of-sample domain);
// domains absent from the plan get n_i = 0. Within each domain the original
// row order is preserved. Requires population outcomes.
Sample stratified_srswor(RngHandle& rng, const Population& population,
                         const std::map<std::int64_t, int>& plan);

// m independent draws with replacement.
std::vector<double> srswr(RngHandle& rng, std::span<const double> pool, int m);

// Fixed published per-area sample-size plans for the simulation harness.
// The 50-area plan satisfies the constraints min 8, max 29, median 18,
// total 921; the 20-area reduction keeps min/max/median and totals 368.
const std::vector<int>& model_based_sample_plan_50();
const std::vector<int>& model_based_sample_plan_20();

}  // namespace saecount
