#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mergesfl/common.h"
#include "mergesfl/controller.h"

namespace mergesfl {
namespace {

constexpr std::uint64_t kRetrySeedStep = 0x9e3779b97f4a7c15ULL;

// Rational scale factor num/den, den > 0.
struct Ratio {
  long long num;
  long long den;
};

bool less(Ratio a, Ratio b) { return a.num * b.den < b.num * a.den; }

long long floor_scaled(Ratio s, int d) { return s.num * d / s.den; }

std::vector<Ratio> breakpoints(std::span<const int> batches, int max_batch) {
  std::vector<Ratio> out;
  for (int d : batches) {
    for (int k = 1; k <= max_batch; ++k) out.push_back({k, d});
  }
  std::sort(out.begin(), out.end(), [](Ratio a, Ratio b) { return less(b, a); });
  return out;
}

double spend_of(std::span<const int> batches, double sample_cost) {
  return static_cast<double>(std::accumulate(batches.begin(), batches.end(), 0LL)) * sample_cost;
}

// Unit decrements that lower KL; never raises spend.
void decrement_repair(std::vector<int>& d, std::span<const LabelDistribution> dists, const LabelDistribution& ref,
                      double epsilon) {
  double current = kl_divergence(merged_distribution(d, dists), ref);
  while (current > epsilon) {
    std::size_t best = d.size();
    double best_kl = current;
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (d[i] <= 1) continue;
      --d[i];
      const double kl = kl_divergence(merged_distribution(d, dists), ref);
      ++d[i];
      if (kl < best_kl) {
        best_kl = kl;
        best = i;
      }
    }
    if (best == d.size()) return;
    --d[best];
    current = best_kl;
  }
}

MergePlan plan_once(std::span<const WorkerEstimate> estimates, const LabelDistribution& reference, double budget,
                    const ControllerConfig& config, int max_batch, std::uint64_t seed) {
  const std::size_t n = estimates.size();
  const std::vector<int> regulated = regulate_batches(estimates, max_batch);

  std::vector<std::size_t> counts(n);
  std::vector<LabelDistribution> dists(n);
  for (std::size_t i = 0; i < n; ++i) {
    counts[i] = estimates[i].participations;
    dists[i] = estimates[i].distribution;
  }
  const std::vector<double> prio = priorities(counts);

  const SelectionProblem selection{regulated, dists, reference, prio, budget, config.sample_cost};
  const SelectionResult chosen = select_workers_ga(selection, config.ga, seed);

  std::vector<int> batches;
  std::vector<LabelDistribution> chosen_dists;
  std::vector<double> costs;
  for (std::size_t w : chosen.workers) {
    batches.push_back(regulated[w]);
    chosen_dists.push_back(dists[w]);
    costs.push_back(estimates[w].cost());
  }

  FinetuneParams tuning = config.finetune;
  tuning.epsilon = config.epsilon;
  tuning.max_batch = max_batch;
  const FinetuneResult tuned = finetune_batches({batches, chosen_dists, costs, reference}, tuning);

  // Scaling may use the full D even when a retry shrank regulation.
  ScaleResult scaled = scale_to_budget(tuned.batches, budget, config.sample_cost, config.max_batch);
  if (!tuned.epsilon_unreachable) decrement_repair(scaled.batches, chosen_dists, reference, config.epsilon);

  MergePlan plan;
  plan.workers = chosen.workers;
  plan.batches = std::move(scaled.batches);
  plan.budget = budget;
  plan.planned_spend = spend_of(plan.batches, config.sample_cost);
  plan.kl = kl_divergence(merged_distribution(plan.batches, chosen_dists), reference);
  plan.selection_kl = chosen.kl;
  plan.finetune_delta = tuned.delta;
  plan.max_batch_used = max_batch;
  plan.epsilon_unreachable = tuned.epsilon_unreachable || plan.kl > config.epsilon;
  plan.proportional_scale = scaled.proportional;
  return plan;
}

}  // namespace

int MergePlan::total_batch() const { return std::accumulate(batches.begin(), batches.end(), 0); }

int MergePlan::batch_of(std::size_t worker) const {
  const auto it = std::lower_bound(workers.begin(), workers.end(), worker);
  if (it == workers.end() || *it != worker) return 0;
  return batches[static_cast<std::size_t>(it - workers.begin())];
}

void validate_plan(const MergePlan& plan) {
  if (plan.workers.empty()) throw ContractError("plan selects no workers");
  if (plan.workers.size() != plan.batches.size()) throw ContractError("plan workers and batches are misaligned");
  for (std::size_t i = 0; i < plan.workers.size(); ++i) {
    if (i > 0 && plan.workers[i] <= plan.workers[i - 1]) throw ContractError("plan workers are not strictly ascending");
    if (plan.batches[i] < 1) throw ContractError("plan batch below 1 for worker " + std::to_string(plan.workers[i]));
  }
  if (plan.planned_spend > plan.budget) {
    throw ContractError("plan spend " + std::to_string(plan.planned_spend) + " exceeds budget " +
                        std::to_string(plan.budget));
  }
  if (!(plan.kl >= 0.0)) throw ContractError("plan KL is negative or NaN");
}

ScaleResult scale_to_budget(std::span<const int> batches, double budget, double sample_cost, int max_batch) {
  if (batches.empty()) throw ValidationError("scale_to_budget: empty worker set");
  if (!(sample_cost > 0.0)) throw ValidationError("scale_to_budget: sample cost must be positive");
  if (max_batch < 1) throw ValidationError("scale_to_budget: max_batch must be >= 1");
  for (int d : batches) {
    if (d < 1) throw ValidationError("scale_to_budget: batches must be >= 1");
  }
  const double r = static_cast<double>(batches.size());
  if (budget < r * sample_cost) {
    throw InfeasibleError("scale_to_budget: budget cannot give every worker one sample");
  }

  const std::vector<Ratio> candidates = breakpoints(batches, max_batch);
  std::vector<int> out(batches.size());

  auto try_scale = [&](Ratio s, bool clamp_low) {
    double spend = 0.0;
    for (std::size_t i = 0; i < batches.size(); ++i) {
      long long v = floor_scaled(s, batches[i]);
      if (clamp_low) v = std::max(1LL, v);
      if (v < 1 || v > max_batch) return false;
      out[i] = static_cast<int>(v);
      spend += static_cast<double>(v);
    }
    return spend * sample_cost <= budget;
  };

  for (Ratio s : candidates) {
    if (try_scale(s, false)) return {out, true};
  }
  for (Ratio s : candidates) {
    if (try_scale(s, true)) return {out, false};
  }
  return {std::vector<int>(batches.size(), 1), false};
}

MergePlan build_plan(std::span<WorkerEstimate> estimates, const LabelDistribution& reference, double budget,
                     const ControllerConfig& config, std::uint64_t seed) {
  if (estimates.empty()) throw ValidationError("build_plan: no workers");
  if (config.max_batch < 1) throw ValidationError("build_plan: max_batch must be >= 1");
  int max_batch = config.max_batch;
  for (std::size_t attempt = 0;; ++attempt) {
    try {
      MergePlan plan = plan_once(estimates, reference, budget, config, max_batch, seed + attempt * kRetrySeedStep);
      plan.retries = attempt;
      validate_plan(plan);
      for (std::size_t w : plan.workers) ++estimates[w].participations;
      return plan;
    } catch (const InfeasibleError&) {
      if (attempt >= config.max_retries || max_batch == 1) throw;
      max_batch = std::max(1, max_batch / 2);
    }
  }
}

}  // namespace mergesfl
