#pragma once

#include <cstddef>
#include <span>

#include "mergesfl/data.h"

namespace mergesfl {

// The parameter server's view of one worker.
struct WorkerEstimate {
  double mu = 0.0;
  double beta = 0.0;
  std::size_t participations = 0;  // K
  LabelDistribution distribution;  // V

  double cost() const { return mu + beta; }
};

struct EstimatorConfig {
  double alpha = 0.8;
  std::size_t window = 20;
  double quantile = 0.25;
};

// Moving average: mu' = alpha * mu + (1 - alpha) * mu_hat, beta likewise.
// K and V are carried over. Observations must be positive.
WorkerEstimate update_estimate(const WorkerEstimate& prev, double mu_hat, double beta_hat, double alpha);

// Linear-interpolated q-quantile (h = (n - 1) q) of the last `window`
// realized bandwidths; `fallback` when the history is empty.
double estimate_bandwidth(std::span<const double> history, double fallback, std::size_t window = 20,
                          double quantile = 0.25);

}  // namespace mergesfl
