#include "mergesfl/sim_env.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "mergesfl/common.h"

namespace mergesfl {
namespace {

void require_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) throw ValidationError(std::string(what) + " must be positive");
}

}  // namespace

WorkerProfile::WorkerProfile(std::size_t id, Capability base, std::size_t mode_period, double mode_spread,
                             std::uint64_t seed)
    : id_(id), base_(base), mode_period_(mode_period), mode_spread_(mode_spread), seed_(seed) {
  require_positive(base.mu, "mu_true");
  require_positive(base.beta, "beta_true");
  if (mode_period == 0) throw ValidationError("mode_period must be >= 1");
  if (!(mode_spread >= 1.0)) throw ValidationError("mode_spread must be >= 1");
}

Capability WorkerProfile::multiplier(std::size_t round) const {
  if (mode_spread_ == 1.0) return {1.0, 1.0};
  const std::size_t period = round / mode_period_;
  Rng rng = make_rng({seed_, 0x4d4f4445ULL, id_, period});
  const double log_span = std::log(mode_spread_);
  const double a = std::exp(log_span * (2.0 * uniform01(rng) - 1.0));
  const double b = std::exp(log_span * (2.0 * uniform01(rng) - 1.0));
  return {a, b};
}

Capability WorkerProfile::truth(std::size_t round) const {
  const Capability m = multiplier(round);
  return {base_.mu * m.mu, base_.beta * m.beta};
}

std::vector<WorkerProfile> make_profiles(const EnvConfig& config) {
  if (config.workers == 0) throw ValidationError("env.workers must be >= 1");
  require_positive(config.base_cost, "env.base_cost");
  if (!(config.spread >= 1.0)) throw ValidationError("env.spread must be >= 1");
  Rng rng = make_rng({config.seed, 0x50524f46ULL});
  std::vector<WorkerProfile> out;
  out.reserve(config.workers);
  for (std::size_t i = 0; i < config.workers; ++i) {
    const double cost = config.base_cost * std::pow(config.spread, uniform01(rng));
    const double share = 0.3 + 0.4 * uniform01(rng);
    out.emplace_back(i, Capability{cost * share, cost * (1.0 - share)}, config.mode_period, config.mode_spread,
                     config.seed);
  }
  return out;
}

Capability observe_capabilities(const WorkerProfile& profile, std::size_t round, std::uint64_t noise_seed,
                                double sigma) {
  if (!(sigma >= 0.0)) throw ValidationError("noise sigma must be >= 0");
  const Capability t = profile.truth(round);
  if (sigma == 0.0) return t;
  Rng rng = make_rng({noise_seed, 0x4f425356ULL, profile.id(), round});
  std::normal_distribution<double> normal(0.0, sigma);
  const double a = std::exp(normal(rng));
  const double b = std::exp(normal(rng));
  return {t.mu * a, t.beta * b};
}

double duration(double tau, double batch, double mu, double beta) { return tau * batch * (mu + beta); }

RoundTimes round_times(std::span<const double> durations) {
  if (durations.empty()) throw ValidationError("round_times: empty worker set");
  RoundTimes out;
  out.completion = *std::max_element(durations.begin(), durations.end());
  double wait = 0.0;
  for (double t : durations) wait += out.completion - t;
  out.avg_wait = wait / static_cast<double>(durations.size());
  return out;
}

BandwidthProcess::BandwidthProcess(double mean, double jitter, std::uint64_t seed)
    : mean_(mean), jitter_(jitter), seed_(seed) {
  require_positive(mean, "bandwidth mean");
  if (!(jitter >= 0.0)) throw ValidationError("bandwidth jitter must be >= 0");
}

double BandwidthProcess::draw(std::size_t round) const {
  if (jitter_ == 0.0) return mean_;
  const double sigma = std::sqrt(std::log1p(jitter_ * jitter_));
  Rng rng = make_rng({seed_, 0x42414e44ULL, round});
  std::normal_distribution<double> normal(0.0, 1.0);
  const double lo = mean_ / 10.0, hi = mean_ * 10.0;
  double b = mean_;
  for (int attempt = 0; attempt < 64; ++attempt) {
    b = mean_ * std::exp(sigma * normal(rng) - 0.5 * sigma * sigma);
    if (b >= lo && b <= hi) return b;
  }
  return std::clamp(b, lo, hi);
}

}  // namespace mergesfl
