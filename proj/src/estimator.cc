#include "mergesfl/estimator.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "mergesfl/common.h"

namespace mergesfl {

WorkerEstimate update_estimate(const WorkerEstimate& prev, double mu_hat, double beta_hat, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("alpha must lie in [0, 1]");
  if (!(mu_hat > 0.0) || !(beta_hat > 0.0) || !std::isfinite(mu_hat) || !std::isfinite(beta_hat)) {
    throw ValidationError("capability observations must be positive");
  }
  WorkerEstimate next = prev;
  next.mu = alpha * prev.mu + (1.0 - alpha) * mu_hat;
  next.beta = alpha * prev.beta + (1.0 - alpha) * beta_hat;
  return next;
}

double estimate_bandwidth(std::span<const double> history, double fallback, std::size_t window, double quantile) {
  if (!(quantile >= 0.0 && quantile <= 1.0)) throw ValidationError("bandwidth quantile must lie in [0, 1]");
  if (window == 0) throw ValidationError("bandwidth window must be >= 1");
  if (history.empty()) return fallback;
  const std::size_t n = std::min(window, history.size());
  std::vector<double> recent(history.end() - static_cast<std::ptrdiff_t>(n), history.end());
  std::sort(recent.begin(), recent.end());
  const double h = static_cast<double>(n - 1) * quantile;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, n - 1);
  return recent[lo] + (h - static_cast<double>(lo)) * (recent[hi] - recent[lo]);
}

}  // namespace mergesfl
