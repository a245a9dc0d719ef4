#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mergesfl/common.h"
#include "mergesfl/controller.h"

namespace mergesfl {
namespace {

// Sign of a*b - c*d computed from the exact products (fma recovers each
// product's rounding error).
int compare_products(double a, double b, double c, double d) {
  const double p = a * b;
  const double q = c * d;
  const double ep = std::fma(a, b, -p);
  const double eq = std::fma(c, d, -q);
  const double diff = (p - q) + (ep - eq);
  return (diff > 0.0) - (diff < 0.0);
}

}  // namespace

std::vector<int> regulate_batches(std::span<const double> costs, int max_batch) {
  if (costs.empty()) throw ValidationError("regulate_batches: empty worker set");
  if (max_batch < 1) throw ValidationError("regulate_batches: max_batch must be >= 1");
  for (double c : costs) {
    if (!(c > 0.0) || !std::isfinite(c)) throw ValidationError("regulate_batches: costs must be positive");
  }
  const auto fastest = static_cast<std::size_t>(std::min_element(costs.begin(), costs.end()) - costs.begin());
  const double budget_time = costs[fastest];
  const double dmax = static_cast<double>(max_batch);

  std::vector<int> out(costs.size());
  for (std::size_t i = 0; i < costs.size(); ++i) {
    if (i == fastest) {
      out[i] = max_batch;
      continue;
    }
    auto n = static_cast<long long>(std::floor(dmax * budget_time / costs[i]));
    n = std::clamp<long long>(n, 0, max_batch);
    // Settle the floor exactly: n * cost_i <= D * cost_l < (n + 1) * cost_i.
    while (n < max_batch && compare_products(static_cast<double>(n + 1), costs[i], dmax, budget_time) <= 0) ++n;
    while (n > 0 && compare_products(static_cast<double>(n), costs[i], dmax, budget_time) > 0) --n;
    out[i] = static_cast<int>(std::max<long long>(1, n));
  }
  return out;
}

std::vector<int> regulate_batches(std::span<const WorkerEstimate> estimates, int max_batch) {
  std::vector<double> costs;
  costs.reserve(estimates.size());
  for (const WorkerEstimate& e : estimates) costs.push_back(e.cost());
  return regulate_batches(costs, max_batch);
}

std::vector<double> priorities(std::span<const std::size_t> participations) {
  double total = 0.0;
  for (std::size_t k : participations) total += static_cast<double>(k) + 1.0;
  std::vector<double> out;
  out.reserve(participations.size());
  for (std::size_t k : participations) out.push_back(total / (static_cast<double>(k) + 1.0));
  return out;
}

double kl_divergence(std::span<const double> phi_h, std::span<const double> phi_0) {
  if (phi_h.size() != phi_0.size()) {
    throw ValidationError("kl_divergence: " + std::to_string(phi_h.size()) + " vs " +
                          std::to_string(phi_0.size()) + " classes");
  }
  double kl = 0.0;
  for (std::size_t j = 0; j < phi_h.size(); ++j) {
    const double p = phi_h[j];
    if (!(p > 0.0)) continue;
    const double q = phi_0[j];
    kl += q > 0.0 ? p * std::log(p / q) : kKlSupportPenalty;
  }
  return std::max(kl, 0.0);
}

double kl_divergence(const LabelDistribution& phi_h, const LabelDistribution& phi_0) {
  return kl_divergence(phi_h.probs(), phi_0.probs());
}

LabelDistribution merged_distribution(std::span<const int> batches, std::span<const LabelDistribution> distributions) {
  if (batches.size() != distributions.size()) throw ValidationError("merged_distribution: size mismatch");
  std::vector<double> weights(batches.begin(), batches.end());
  return mixture(distributions, weights);
}

}  // namespace mergesfl
