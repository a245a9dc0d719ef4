#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace mergesfl {

// Per-sample compute (mu) and transmit (beta) seconds.
struct Capability {
  double mu = 0.0;
  double beta = 0.0;

  double cost() const { return mu + beta; }
};

struct EnvConfig {
  std::size_t workers = 20;
  // Ratio between the slowest and fastest base per-sample cost.
  double spread = 10.0;
  // Per-sample cost (mu + beta) of the fastest base profile, seconds.
  double base_cost = 0.01;
  // Mode multipliers are log-uniform in [1/mode_spread, mode_spread].
  double mode_spread = 1.5;
  std::size_t mode_period = 20;
  // Lognormal sigma of observation noise.
  double noise_sigma = 0.1;
  double bandwidth_mean = 256.0;
  // Coefficient of variation of the per-round ingress bandwidth.
  double bandwidth_jitter = 0.2;
  std::uint64_t seed = 1;
};

// Ground truth for one simulated worker. The mode multiplier is redrawn
// every `mode_period` rounds as a pure function of (seed, id, period).
class WorkerProfile {
 public:
  WorkerProfile(std::size_t id, Capability base, std::size_t mode_period, double mode_spread,
                std::uint64_t seed);

  std::size_t id() const { return id_; }
  const Capability& base() const { return base_; }
  std::size_t mode_period() const { return mode_period_; }

  // Multipliers applied to (mu, beta) during `round`.
  Capability multiplier(std::size_t round) const;
  // base * multiplier: the noise-free capability in `round`.
  Capability truth(std::size_t round) const;

 private:
  std::size_t id_;
  Capability base_;
  std::size_t mode_period_;
  double mode_spread_;
  std::uint64_t seed_;
};

// Heterogeneous profiles: base cost log-uniform in [base_cost, base_cost * spread],
// split between mu and beta with a compute share in [0.3, 0.7].
std::vector<WorkerProfile> make_profiles(const EnvConfig& config);

// truth(round) scaled by independent lognormal(0, sigma) noise on mu and beta,
// seeded by (noise_seed, worker id, round).
Capability observe_capabilities(const WorkerProfile& profile, std::size_t round, std::uint64_t noise_seed,
                                double sigma);

// tau * d * (mu + beta).
double duration(double tau, double batch, double mu, double beta);

struct RoundTimes {
  double completion = 0.0;
  double avg_wait = 0.0;
};

// completion = max t_i; avg_wait = mean(completion - t_i). Throws on empty input.
RoundTimes round_times(std::span<const double> durations);

// Per-round ingress bandwidth: mean * exp(s z - s^2/2), s^2 = ln(1 + jitter^2),
// redrawn while outside [mean/10, 10 mean]. A pure function of (seed, round).
class BandwidthProcess {
 public:
  BandwidthProcess(double mean, double jitter, std::uint64_t seed);

  double draw(std::size_t round) const;
  double mean() const { return mean_; }
  double jitter() const { return jitter_; }

 private:
  double mean_;
  double jitter_;
  std::uint64_t seed_;
};

inline double draw_bandwidth(const BandwidthProcess& process, std::size_t round) { return process.draw(round); }

}  // namespace mergesfl
