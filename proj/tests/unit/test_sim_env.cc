#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "mergesfl/common.h"
#include "mergesfl/sim_env.h"

using namespace mergesfl;

TEST(Duration, DirectFormulaAndLinearity) {
  EXPECT_DOUBLE_EQ(duration(10, 4, 0.5, 1.5), 80.0);
  EXPECT_EQ(duration(10, 0, 0.5, 1.5), 0.0);
  EXPECT_DOUBLE_EQ(duration(3, 5 * 7, 0.2, 0.1), 5.0 * duration(3, 7, 0.2, 0.1));
}

TEST(RoundTimes, Examples) {
  const std::vector<double> equal = {2.5, 2.5, 2.5};
  EXPECT_EQ(round_times(equal).avg_wait, 0.0);
  const std::vector<double> two = {1.0, 3.0};
  EXPECT_EQ(round_times(two).completion, 3.0);
  EXPECT_EQ(round_times(two).avg_wait, 1.0);
  EXPECT_THROW(round_times(std::vector<double>{}), ValidationError);
}

TEST(RoundTimes, MatchesScalarLoop) {
  Rng rng = make_rng({21});
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> t(1 + rng() % 12);
    for (double& x : t) x = 10.0 * uniform01(rng);
    double mx = t[0];
    for (double x : t) mx = x > mx ? x : mx;
    double wait = 0.0;
    for (double x : t) wait += mx - x;
    const RoundTimes r = round_times(t);
    EXPECT_EQ(r.completion, mx);
    EXPECT_NEAR(r.avg_wait, wait / static_cast<double>(t.size()), 1e-12);
    EXPECT_EQ(r.avg_wait == 0.0, std::all_of(t.begin(), t.end(), [&](double x) { return x == mx; }));
  }
}

TEST(Profiles, SpreadAndValidation) {
  EnvConfig c;
  c.workers = 200;
  const std::vector<WorkerProfile> ps = make_profiles(c);
  double lo = 1e9, hi = 0.0;
  for (const WorkerProfile& p : ps) {
    EXPECT_GT(p.base().mu, 0.0);
    EXPECT_GT(p.base().beta, 0.0);
    lo = std::min(lo, p.base().cost());
    hi = std::max(hi, p.base().cost());
  }
  EXPECT_GE(lo, c.base_cost);
  EXPECT_LE(hi, c.base_cost * c.spread);
  EXPECT_GT(hi / lo, 5.0);
  EXPECT_THROW(WorkerProfile(0, {0.0, 1.0}, 20, 1.5, 1), ValidationError);
  EXPECT_THROW(WorkerProfile(0, {1.0, 1.0}, 0, 1.5, 1), ValidationError);
}

TEST(Profiles, ModeChangesExactlyAtPeriod) {
  const WorkerProfile p(3, {0.01, 0.02}, 20, 2.0, 5);
  std::set<std::pair<double, double>> seen;
  for (std::size_t h = 0; h < 100; ++h) {
    const Capability m = p.multiplier(h);
    EXPECT_GT(m.mu, 0.0);
    EXPECT_GE(m.mu, 0.5 - 1e-12);
    EXPECT_LE(m.mu, 2.0 + 1e-12);
    if (h % 20 != 0) {
      const Capability prev = p.multiplier(h - 1);
      EXPECT_EQ(m.mu, prev.mu);
      EXPECT_EQ(m.beta, prev.beta);
    }
    seen.insert({m.mu, m.beta});
  }
  EXPECT_EQ(seen.size(), 5u);
  const WorkerProfile flat(3, {0.01, 0.02}, 20, 1.0, 5);
  EXPECT_EQ(flat.truth(57).mu, 0.01);
}

TEST(ObserveCapabilities, NoiseFreeAndSeeded) {
  const WorkerProfile p(1, {0.01, 0.02}, 20, 1.5, 5);
  const Capability t = p.truth(33);
  const Capability exact = observe_capabilities(p, 33, 9, 0.0);
  EXPECT_EQ(exact.mu, t.mu);
  EXPECT_EQ(exact.beta, t.beta);
  EXPECT_EQ(observe_capabilities(p, 4, 9, 0.1).mu, observe_capabilities(p, 4, 9, 0.1).mu);
  EXPECT_NE(observe_capabilities(p, 4, 9, 0.1).mu, observe_capabilities(p, 5, 9, 0.1).mu);
}

TEST(ObserveCapabilities, LognormalMeanMonteCarlo) {
  const WorkerProfile p(1, {0.01, 0.02}, 1000000, 1.0, 5);
  constexpr double sigma = 0.1;
  double mu = 0.0, beta = 0.0;
  constexpr int n = 10000;
  for (int h = 0; h < n; ++h) {
    const Capability o = observe_capabilities(p, static_cast<std::size_t>(h), 77, sigma);
    mu += o.mu;
    beta += o.beta;
  }
  const double factor = std::exp(sigma * sigma / 2.0);
  EXPECT_NEAR(mu / n / (0.01 * factor), 1.0, 0.02);
  EXPECT_NEAR(beta / n / (0.02 * factor), 1.0, 0.02);
}

TEST(Bandwidth, NoJitterIsConstant) {
  const BandwidthProcess b(100.0, 0.0, 3);
  for (std::size_t h = 0; h < 10; ++h) EXPECT_EQ(draw_bandwidth(b, h), 100.0);
}

TEST(Bandwidth, SeededPositiveAndMeanPreserving) {
  const BandwidthProcess b(100.0, 0.2, 3);
  const BandwidthProcess again(100.0, 0.2, 3);
  double sum = 0.0;
  constexpr int n = 10000;
  for (int h = 0; h < n; ++h) {
    const double x = b.draw(static_cast<std::size_t>(h));
    EXPECT_GT(x, 0.0);
    EXPECT_EQ(x, again.draw(static_cast<std::size_t>(h)));
    sum += x;
  }
  EXPECT_NEAR(sum / n / 100.0, 1.0, 0.02);
  EXPECT_THROW(BandwidthProcess(0.0, 0.1, 1), ValidationError);
}
