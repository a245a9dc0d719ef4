#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "mergesfl/common.h"
#include "mergesfl/controller.h"

namespace mergesfl {
namespace {

using Chromosome = std::vector<std::uint8_t>;

std::size_t pick_index(Rng& rng, std::size_t n) {
  return std::min(n - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)));
}

void validate(const SelectionProblem& p) {
  const std::size_t n = p.batches.size();
  if (n == 0) throw ValidationError("select_workers_ga: no candidates");
  if (p.distributions.size() != n) throw ValidationError("select_workers_ga: distribution count mismatch");
  if (!p.priorities.empty() && p.priorities.size() != n) throw ValidationError("select_workers_ga: priority count mismatch");
  if (!(p.budget > 0.0) || !(p.sample_cost > 0.0)) throw ValidationError("select_workers_ga: budget and c must be positive");
  for (std::size_t i = 0; i < n; ++i) {
    if (p.batches[i] < 1) throw ValidationError("select_workers_ga: batches must be >= 1");
    if (p.distributions[i].classes() != p.reference.classes()) throw ValidationError("select_workers_ga: class count mismatch");
  }
}

struct Evaluation {
  double fitness = kEmptySetFitness;
  double kl = 0.0;
  bool feasible = false;
};

Evaluation evaluate(const SelectionProblem& p, std::span<const std::uint8_t> chrom) {
  const std::size_t m = p.reference.classes();
  std::vector<double> mass(m, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < chrom.size(); ++i) {
    if (!chrom[i]) continue;
    const double d = p.batches[i];
    total += d;
    for (std::size_t j = 0; j < m; ++j) mass[j] += d * p.distributions[i][j];
  }
  Evaluation e;
  if (total == 0.0) return e;
  for (double& x : mass) x /= total;
  e.kl = kl_divergence(mass, p.reference.probs());
  const double spend = total * p.sample_cost;
  e.feasible = spend <= p.budget;
  e.fitness = e.kl + (e.feasible ? 0.0 : kInfeasibilityWeight * (spend - p.budget) / p.budget);
  return e;
}

// Weighted sampling of `count` distinct genes.
Chromosome priority_seeded(Rng& rng, std::span<const double> weights, std::size_t count) {
  Chromosome c(weights.size(), 0);
  std::vector<double> w(weights.begin(), weights.end());
  for (std::size_t k = 0; k < count; ++k) {
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    if (!(total > 0.0)) break;
    double u = uniform01(rng) * total;
    std::size_t chosen = w.size();
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (w[i] <= 0.0) continue;
      chosen = i;
      if (u < w[i]) break;
      u -= w[i];
    }
    c[chosen] = 1;
    w[chosen] = 0.0;
  }
  return c;
}

// Deterministic fallback: grow a feasible set greedily by KL.
Chromosome greedy_feasible(const SelectionProblem& p) {
  const std::size_t n = p.batches.size();
  Chromosome current(n, 0);
  double current_kl = std::numeric_limits<double>::infinity();
  for (;;) {
    std::size_t best = n;
    double best_kl = current_kl;
    for (std::size_t i = 0; i < n; ++i) {
      if (current[i]) continue;
      current[i] = 1;
      const Evaluation e = evaluate(p, current);
      current[i] = 0;
      if (e.feasible && e.kl < best_kl) {
        best_kl = e.kl;
        best = i;
      }
    }
    if (best == n) return current;
    current[best] = 1;
    current_kl = best_kl;
  }
}

}  // namespace

double selection_fitness(const SelectionProblem& problem, std::span<const std::uint8_t> chromosome) {
  validate(problem);
  if (chromosome.size() != problem.batches.size()) throw ValidationError("selection_fitness: chromosome length mismatch");
  return evaluate(problem, chromosome).fitness;
}

SelectionResult select_workers_ga(const SelectionProblem& problem, const GaParams& params, std::uint64_t seed) {
  validate(problem);
  const std::size_t n = problem.batches.size();
  const double smallest = *std::min_element(problem.batches.begin(), problem.batches.end()) * problem.sample_cost;
  if (smallest > problem.budget) {
    throw InfeasibleError("select_workers_ga: no single worker fits the bandwidth budget");
  }
  if (params.population < 2 || params.tournament < 1 || params.elites >= params.population) {
    throw ValidationError("select_workers_ga: bad GA parameters");
  }
  std::vector<double> prio(problem.priorities.begin(), problem.priorities.end());
  if (prio.empty()) prio.assign(n, 1.0);

  Rng rng = make_rng({seed, 0x47414741ULL});
  const double mutation = params.mutation > 0.0 ? params.mutation : 1.0 / static_cast<double>(n);
  const std::size_t seeded = std::max<std::size_t>(1, n / 2);

  // Every feasible subset evaluated, keyed by bit-string for a deterministic scan.
  std::map<Chromosome, double> feasible;
  auto score = [&](const Chromosome& c) {
    Evaluation e = evaluate(problem, c);
    if (e.feasible) feasible.emplace(c, e.kl);
    return e.fitness;
  };

  std::vector<Chromosome> pop;
  std::vector<double> fit;
  pop.reserve(params.population);
  for (std::size_t k = 0; k < params.population; ++k) {
    pop.push_back(priority_seeded(rng, prio, seeded));
    fit.push_back(score(pop.back()));
  }

  SelectionResult result;
  auto ranked = [&]() {
    std::vector<std::size_t> order(pop.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fit[a] < fit[b]; });
    return order;
  };
  auto tournament = [&]() -> const Chromosome& {
    std::size_t best = pick_index(rng, pop.size());
    for (std::size_t t = 1; t < params.tournament; ++t) {
      const std::size_t c = pick_index(rng, pop.size());
      if (fit[c] < fit[best] || (fit[c] == fit[best] && c < best)) best = c;
    }
    return pop[best];
  };

  std::vector<std::size_t> order = ranked();
  result.best_fitness.push_back(fit[order.front()]);
  for (std::size_t g = 0; g < params.generations; ++g) {
    std::vector<Chromosome> next;
    std::vector<double> next_fit;
    next.reserve(params.population);
    for (std::size_t e = 0; e < params.elites; ++e) {
      next.push_back(pop[order[e]]);
      next_fit.push_back(fit[order[e]]);
    }
    while (next.size() < params.population) {
      const Chromosome& a = tournament();
      const Chromosome& b = tournament();
      Chromosome child = a;
      if (uniform01(rng) < params.crossover) {
        for (std::size_t i = 0; i < n; ++i) child[i] = uniform01(rng) < 0.5 ? a[i] : b[i];
      }
      for (std::size_t i = 0; i < n; ++i) {
        if (uniform01(rng) < mutation) child[i] ^= 1;
      }
      next_fit.push_back(score(child));
      next.push_back(std::move(child));
    }
    pop = std::move(next);
    fit = std::move(next_fit);
    order = ranked();
    result.best_fitness.push_back(fit[order.front()]);
  }

  Chromosome chosen;
  if (feasible.empty()) {
    chosen = greedy_feasible(problem);
  } else {
    double best_kl = std::numeric_limits<double>::infinity();
    for (const auto& [c, kl] : feasible) best_kl = std::min(best_kl, kl);
    double best_priority = -1.0;
    double chosen_kl = 0.0;
    for (const auto& [c, kl] : feasible) {
      if (kl > best_kl + params.priority_slack) continue;
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) total += c[i] ? prio[i] : 0.0;
      if (total > best_priority || (total == best_priority && kl < chosen_kl)) {
        best_priority = total;
        chosen_kl = kl;
        chosen = c;
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (chosen[i]) result.workers.push_back(i);
  }
  result.kl = evaluate(problem, chosen).kl;
  return result;
}

}  // namespace mergesfl
