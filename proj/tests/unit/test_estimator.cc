#include <gtest/gtest.h>

#include <cmath>

#include "mergesfl/common.h"
#include "mergesfl/estimator.h"

using namespace mergesfl;

TEST(UpdateEstimate, Examples) {
  WorkerEstimate e;
  e.mu = 10.0;
  e.beta = 4.0;
  e.participations = 3;
  const WorkerEstimate same = update_estimate(e, 99.0, 99.0, 1.0);
  EXPECT_EQ(same.mu, 10.0);
  EXPECT_EQ(same.beta, 4.0);
  const WorkerEstimate next = update_estimate(e, 20.0, 4.0, 0.8);
  EXPECT_DOUBLE_EQ(next.mu, 12.0);
  EXPECT_DOUBLE_EQ(next.beta, 4.0);
  EXPECT_EQ(next.participations, 3u);
  EXPECT_THROW(update_estimate(e, 0.0, 1.0, 0.8), ValidationError);
  EXPECT_THROW(update_estimate(e, 1.0, 1.0, 1.5), ValidationError);
}

TEST(UpdateEstimate, GeometricConvergenceWithinHull) {
  WorkerEstimate e;
  e.mu = 1.0;
  e.beta = 9.0;
  const double truth = 5.0;
  for (int t = 1; t <= 40; ++t) {
    e = update_estimate(e, truth, truth, 0.8);
    EXPECT_LE(std::abs(e.mu - truth), std::pow(0.8, t) * 4.0 + 1e-12);
    EXPECT_LE(std::abs(e.beta - truth), std::pow(0.8, t) * 4.0 + 1e-12);
    EXPECT_GE(e.mu, 1.0);
    EXPECT_LE(e.beta, 9.0);
  }
}

TEST(EstimateBandwidth, Examples) {
  const std::vector<double> constant(7, 42.0);
  EXPECT_EQ(estimate_bandwidth(constant, 1.0), 42.0);
  const std::vector<double> h = {40, 10, 30, 20};
  EXPECT_DOUBLE_EQ(estimate_bandwidth(h, 1.0, 20, 0.25), 17.5);
  EXPECT_EQ(estimate_bandwidth(std::vector<double>{}, 256.0), 256.0);
}

TEST(EstimateBandwidth, WindowBoundAndMonotoneInQuantile) {
  Rng rng = make_rng({31});
  std::vector<double> h(50);
  for (double& x : h) x = 50.0 + 100.0 * uniform01(rng);
  double prev = 0.0;
  double recent_max = 0.0;
  for (std::size_t i = h.size() - 20; i < h.size(); ++i) recent_max = std::max(recent_max, h[i]);
  for (double q = 0.0; q <= 1.0; q += 0.05) {
    const double b = estimate_bandwidth(h, 1.0, 20, q);
    EXPECT_GE(b, prev);
    EXPECT_LE(b, recent_max);
    prev = b;
  }
  EXPECT_THROW(estimate_bandwidth(h, 1.0, 0, 0.25), ValidationError);
  EXPECT_THROW(estimate_bandwidth(h, 1.0, 20, 1.5), ValidationError);
}
