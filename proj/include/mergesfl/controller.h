#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mergesfl/data.h"
#include "mergesfl/estimator.h"

namespace mergesfl {

// ---------------------------------------------------------------------------
// Batch-size regulation and selection priority.

// The fastest worker l (minimum mu + beta, lowest id on ties) gets
// max_batch; every other worker gets max(1, floor(max_batch * cost_l / cost_i)).
// The floor is evaluated exactly, so tau * d_i * cost_i never exceeds the
// fastest worker's duration unless the clamp to 1 engages.
std::vector<int> regulate_batches(std::span<const double> costs, int max_batch);
std::vector<int> regulate_batches(std::span<const WorkerEstimate> estimates, int max_batch);

// p_i = sum_j (K_j + 1) / (K_i + 1).
std::vector<double> priorities(std::span<const std::size_t> participations);

// ---------------------------------------------------------------------------
// Label-mixture matching.

// Contribution of a class present in phi_h but absent from phi_0.
inline constexpr double kKlSupportPenalty = 1e9;

// sum_j phi_h(j) ln(phi_h(j) / phi_0(j)); zero-mass terms of phi_h vanish.
// Clamped at 0 against rounding.
double kl_divergence(const LabelDistribution& phi_h, const LabelDistribution& phi_0);
double kl_divergence(std::span<const double> phi_h, std::span<const double> phi_0);

// Batch-weighted mixture of the members' label distributions. `batches` and
// `distributions` are aligned; members with batch 0 are ignored.
LabelDistribution merged_distribution(std::span<const int> batches,
                                      std::span<const LabelDistribution> distributions);

// ---------------------------------------------------------------------------
// Genetic worker selection.

struct GaParams {
  std::size_t population = 32;
  std::size_t generations = 60;
  std::size_t tournament = 3;
  double crossover = 0.7;
  // Per-gene flip probability; 0 means 1/N.
  double mutation = 0.0;
  std::size_t elites = 2;
  // Among feasible subsets whose KL is within this much of the best one
  // found, the subset with the largest total priority is returned.
  double priority_slack = 0.05;
};

inline constexpr double kInfeasibilityWeight = 1e6;
inline constexpr double kEmptySetFitness = 1e12;

struct SelectionProblem {
  std::span<const int> batches;                       // regulated d_i, one per candidate
  std::span<const LabelDistribution> distributions;   // V_i, one per candidate
  const LabelDistribution& reference;                 // Phi_0
  std::span<const double> priorities;                 // empty means uniform
  double budget = 0.0;                                // B
  double sample_cost = 1.0;                           // c
};

struct SelectionResult {
  std::vector<std::size_t> workers;  // ascending
  double kl = 0.0;
  // Best fitness in the population before evolution and after each generation.
  std::vector<double> best_fitness;
};

// KL of the members' merged mixture plus kInfeasibilityWeight * overspend / B
// when sum d_i c > B. The empty set scores kEmptySetFitness.
double selection_fitness(const SelectionProblem& problem, std::span<const std::uint8_t> chromosome);

// Elitist GA over selection bit-strings. Throws InfeasibleError when no single
// candidate fits the budget; otherwise the result is always feasible.
SelectionResult select_workers_ga(const SelectionProblem& problem, const GaParams& params, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Batch fine-tuning under KL <= epsilon.

struct FinetuneParams {
  double epsilon = 0.05;
  int max_batch = 64;
  std::size_t outer_steps = 30;
  std::size_t inner_steps = 100;
  // Multiplier step at outer iteration t is outer_step / sqrt(t).
  double outer_step = 0.5;
  // Inner step is inner_step * max_batch / sqrt(k + 1).
  double inner_step = 0.05;
};

struct FinetuneProblem {
  std::span<const int> batches;                      // selected workers only
  std::span<const LabelDistribution> distributions;  // aligned with batches
  std::span<const double> costs;                     // mu + beta, aligned
  const LabelDistribution& reference;
};

struct FinetuneResult {
  std::vector<int> batches;
  double kl = 0.0;
  double delta = 0.0;  // increased waiting time per iteration
  bool epsilon_unreachable = false;
};

// (1/R) sum |after_i - before_i| * cost_i.
double waiting_increase(std::span<const int> before, std::span<const int> after, std::span<const double> costs);

// Minimizes the waiting increase subject to KL <= epsilon, 1 <= d_i <= max_batch.
// When no candidate meets epsilon the KL-minimizing rounding is returned and
// flagged.
FinetuneResult finetune_batches(const FinetuneProblem& problem, const FinetuneParams& params);

// ---------------------------------------------------------------------------
// Budget scaling and the per-round plan.

struct ScaleResult {
  std::vector<int> batches;
  // False when even the smallest proportional scale overspends and batches
  // had to be clamped up to 1 independently.
  bool proportional = true;
};

// Multiplies every batch by the largest rational s with sum floor(s d_i) c <= B
// and 1 <= floor(s d_i) <= max_batch. Throws InfeasibleError when B < R c.
ScaleResult scale_to_budget(std::span<const int> batches, double budget, double sample_cost, int max_batch);

struct ControllerConfig {
  int max_batch = 64;  // D
  double epsilon = 0.05;
  double sample_cost = 1.0;  // c
  std::size_t max_retries = 6;
  GaParams ga;
  FinetuneParams finetune;  // epsilon and max_batch are taken from above
};

struct MergePlan {
  std::vector<std::size_t> workers;  // merge order, ascending id
  std::vector<int> batches;          // aligned with workers
  double budget = 0.0;
  double planned_spend = 0.0;
  double kl = 0.0;            // KL of the final batches
  double selection_kl = 0.0;  // KL of the GA subset at regulated batches
  double finetune_delta = 0.0;
  int max_batch_used = 0;
  std::size_t retries = 0;
  bool epsilon_unreachable = false;
  bool proportional_scale = true;

  int total_batch() const;
  // 0 if the worker is not selected.
  int batch_of(std::size_t worker) const;
};

// Throws ContractError unless the plan is nonempty, ascending, batches >= 1
// and planned_spend <= budget.
void validate_plan(const MergePlan& plan);

// Regulate, prioritize, select, fine-tune and scale. Increments K of the
// selected workers. On InfeasibleError max_batch is halved and the round is
// replanned, at most config.max_retries times.
MergePlan build_plan(std::span<WorkerEstimate> estimates, const LabelDistribution& reference, double budget,
                     const ControllerConfig& config, std::uint64_t seed);

}  // namespace mergesfl
