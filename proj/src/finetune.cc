// Batch fine-tuning as a Lagrangian dual problem.
//
//   min_d  Delta(d) = (1/R) sum_i |d_i - d0_i| (mu_i + beta_i)
//   s.t.   KL(Phi(d) || Phi_0) <= epsilon,  1 <= d_i <= D,  d_i integer
//
// where Phi(d) = sum_i d_i V_i / sum_i d_i. The integrality is relaxed and the
// KL constraint dualized with multiplier lambda >= 0:
//
//   L(x, lambda) = Delta(x) + lambda (KL(x) - epsilon),   x in [1, D]^R.
//
// The outer loop is projected subgradient ascent on lambda; the inner loop
// approximately minimizes L over the box by projected (normalized) gradient
// descent. Each inner solution is rounded and greedily repaired into a
// feasible integer point, which is polished back toward d0 while the
// constraint holds. The best feasible point seen is returned. The
// equal-batch point at the cost-weighted median of d0 seeds the incumbent.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mergesfl/common.h"
#include "mergesfl/controller.h"

namespace mergesfl {
namespace {

constexpr double kFeasibilityTolerance = 1e-12;
constexpr double kMissingClassLog = 50.0;

struct Instance {
  std::size_t workers = 0;
  std::size_t classes = 0;
  std::vector<int> original;
  std::vector<double> costs;
  std::vector<double> unit_costs;  // costs / max cost
  std::vector<std::vector<double>> dists;
  std::vector<double> reference;
  int max_batch = 1;
};

// Label mass sum_i x_i V_i plus its total, updated incrementally.
struct Mixture {
  std::vector<double> mass;
  double total = 0.0;

  template <typename T>
  Mixture(const Instance& in, std::span<const T> x) : mass(in.classes, 0.0) {
    for (std::size_t i = 0; i < in.workers; ++i) add(in, i, static_cast<double>(x[i]));
  }

  void add(const Instance& in, std::size_t i, double amount) {
    total += amount;
    for (std::size_t j = 0; j < in.classes; ++j) mass[j] += amount * in.dists[i][j];
  }

  double kl(const Instance& in) const {
    double kl = 0.0;
    for (std::size_t j = 0; j < in.classes; ++j) {
      const double p = mass[j] / total;
      if (!(p > 0.0)) continue;
      kl += in.reference[j] > 0.0 ? p * std::log(p / in.reference[j]) : kKlSupportPenalty;
    }
    return std::max(kl, 0.0);
  }

  // KL after moving worker i by `step` samples, without mutating.
  double kl_after(const Instance& in, std::size_t i, double step) const {
    const double t = total + step;
    double kl = 0.0;
    for (std::size_t j = 0; j < in.classes; ++j) {
      const double p = (mass[j] + step * in.dists[i][j]) / t;
      if (!(p > 0.0)) continue;
      kl += in.reference[j] > 0.0 ? p * std::log(p / in.reference[j]) : kKlSupportPenalty;
    }
    return std::max(kl, 0.0);
  }
};

double kl_of(const Instance& in, std::span<const int> d) { return Mixture(in, d).kl(in); }

bool feasible_kl(double kl, double epsilon) { return kl <= epsilon + kFeasibilityTolerance; }

// d KL / d x_i = (1/S) sum_j ln(Phi_j / Phi0_j) (V_ij - Phi_j).
std::vector<double> kl_gradient(const Instance& in, std::span<const double> x) {
  const Mixture mix(in, x);
  std::vector<double> log_ratio(in.classes, 0.0);
  std::vector<double> phi(in.classes, 0.0);
  for (std::size_t j = 0; j < in.classes; ++j) {
    phi[j] = mix.mass[j] / mix.total;
    if (phi[j] > 0.0) log_ratio[j] = in.reference[j] > 0.0 ? std::log(phi[j] / in.reference[j]) : kMissingClassLog;
  }
  std::vector<double> g(in.workers, 0.0);
  for (std::size_t i = 0; i < in.workers; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < in.classes; ++j) acc += log_ratio[j] * (in.dists[i][j] - phi[j]);
    g[i] = acc / mix.total;
  }
  return g;
}

// Greedy unit moves that lower KL, preferring the best KL drop per unit of
// added waiting; stops at `epsilon` or at a local minimum of KL.
void repair(const Instance& in, std::vector<int>& d, double epsilon) {
  Mixture mix(in, std::span<const int>(d));
  double current = mix.kl(in);
  while (!feasible_kl(current, epsilon)) {
    std::size_t best_i = in.workers;
    int best_step = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    double best_kl = current;
    for (std::size_t i = 0; i < in.workers; ++i) {
      for (int step : {-1, 1}) {
        const int next = d[i] + step;
        if (next < 1 || next > in.max_batch) continue;
        const double kl = mix.kl_after(in, i, step);
        const double drop = current - kl;
        if (!(drop > 0.0)) continue;
        const double added = in.unit_costs[i] * (std::abs(next - in.original[i]) - std::abs(d[i] - in.original[i]));
        // Moves that also shrink the waiting increase rank above all others.
        const double score = added <= 0.0 ? 1e300 * (1.0 + drop) : drop / added;
        if (score > best_score) {
          best_score = score;
          best_i = i;
          best_step = step;
          best_kl = kl;
        }
      }
    }
    if (best_i == in.workers) return;
    d[best_i] += best_step;
    mix.add(in, best_i, best_step);
    current = best_kl;
  }
}

// Walks batches back toward the original ones while KL stays within epsilon,
// largest waiting reduction first.
void polish(const Instance& in, std::vector<int>& d, double epsilon) {
  Mixture mix(in, std::span<const int>(d));
  for (;;) {
    std::size_t best_i = in.workers;
    for (std::size_t i = 0; i < in.workers; ++i) {
      if (d[i] == in.original[i]) continue;
      const int step = d[i] < in.original[i] ? 1 : -1;
      if (!feasible_kl(mix.kl_after(in, i, step), epsilon)) continue;
      if (best_i == in.workers || in.unit_costs[i] > in.unit_costs[best_i]) best_i = i;
    }
    if (best_i == in.workers) return;
    const int step = d[best_i] < in.original[best_i] ? 1 : -1;
    d[best_i] += step;
    mix.add(in, best_i, step);
  }
}

int weighted_median(std::span<const int> values, std::span<const double> weights) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  const double half = 0.5 * std::accumulate(weights.begin(), weights.end(), 0.0);
  double acc = 0.0;
  for (std::size_t i : order) {
    acc += weights[i];
    if (acc >= half) return values[i];
  }
  return values[order.back()];
}

std::vector<int> round_to_box(std::span<const double> x, int max_batch) {
  std::vector<int> d(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) d[i] = std::clamp(static_cast<int>(std::lround(x[i])), 1, max_batch);
  return d;
}

}  // namespace

double waiting_increase(std::span<const int> before, std::span<const int> after, std::span<const double> costs) {
  if (before.size() != after.size() || before.size() != costs.size() || before.empty()) {
    throw ValidationError("waiting_increase: size mismatch");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < before.size(); ++i) total += std::abs(after[i] - before[i]) * costs[i];
  return total / static_cast<double>(before.size());
}

FinetuneResult finetune_batches(const FinetuneProblem& problem, const FinetuneParams& params) {
  const std::size_t r = problem.batches.size();
  if (r == 0) throw ValidationError("finetune_batches: empty worker set");
  if (problem.distributions.size() != r || problem.costs.size() != r) throw ValidationError("finetune_batches: size mismatch");
  if (!(params.epsilon >= 0.0)) throw ValidationError("finetune_batches: epsilon must be >= 0");
  if (params.max_batch < 1) throw ValidationError("finetune_batches: max_batch must be >= 1");

  Instance in;
  in.workers = r;
  in.classes = problem.reference.classes();
  in.max_batch = params.max_batch;
  in.original.assign(problem.batches.begin(), problem.batches.end());
  in.costs.assign(problem.costs.begin(), problem.costs.end());
  in.reference.assign(problem.reference.probs().begin(), problem.reference.probs().end());
  const double max_cost = *std::max_element(in.costs.begin(), in.costs.end());
  for (std::size_t i = 0; i < r; ++i) {
    if (in.original[i] < 1 || in.original[i] > params.max_batch) throw ValidationError("finetune_batches: batch outside [1, max_batch]");
    if (!(in.costs[i] > 0.0)) throw ValidationError("finetune_batches: costs must be positive");
    if (problem.distributions[i].classes() != in.classes) throw ValidationError("finetune_batches: class count mismatch");
    in.dists.emplace_back(problem.distributions[i].probs().begin(), problem.distributions[i].probs().end());
    in.unit_costs.push_back(in.costs[i] / max_cost);
  }
  const double eps = params.epsilon;

  FinetuneResult result;
  result.kl = kl_of(in, in.original);
  if (feasible_kl(result.kl, eps)) {
    result.batches = in.original;
    return result;
  }

  bool have_best = false;
  auto consider = [&](std::vector<int> d) {
    repair(in, d, eps);
    const double kl = kl_of(in, d);
    if (!feasible_kl(kl, eps)) return;
    polish(in, d, eps);
    const double kl_polished = kl_of(in, d);
    const double delta = waiting_increase(in.original, d, in.costs);
    if (!have_best || delta < result.delta || (delta == result.delta && kl_polished < result.kl)) {
      have_best = true;
      result.batches = std::move(d);
      result.kl = kl_polished;
      result.delta = delta;
    }
  };

  // Incumbent: every batch at the cost-weighted median of the originals.
  const int median = weighted_median(in.original, in.costs);
  consider(std::vector<int>(r, median));

  // Dual ascent.
  const double d_max = static_cast<double>(params.max_batch);
  const double gradient_scale = static_cast<double>(r) * d_max;
  const double violation_scale = std::max(eps, 0.01);
  std::vector<double> x(in.original.begin(), in.original.end());
  double lambda = 1.0;
  for (std::size_t t = 1; t <= params.outer_steps; ++t) {
    for (std::size_t k = 0; k < params.inner_steps; ++k) {
      const std::vector<double> gkl = kl_gradient(in, x);
      std::vector<double> g(r);
      double norm = 0.0;
      for (std::size_t i = 0; i < r; ++i) {
        const double dev = x[i] - in.original[i];
        const double sign = (dev > 0.0) - (dev < 0.0);
        g[i] = in.unit_costs[i] * sign + lambda * gradient_scale * gkl[i];
        norm = std::max(norm, std::abs(g[i]));
      }
      if (norm == 0.0) break;
      const double step = params.inner_step * d_max / std::sqrt(static_cast<double>(k + 1)) / std::max(1.0, norm);
      for (std::size_t i = 0; i < r; ++i) x[i] = std::clamp(x[i] - step * g[i], 1.0, d_max);
    }
    const double kl_x = Mixture(in, std::span<const double>(x)).kl(in);
    consider(round_to_box(x, params.max_batch));
    lambda = std::max(0.0, lambda + params.outer_step / std::sqrt(static_cast<double>(t)) * (kl_x - eps) / violation_scale);
  }

  if (have_best) return result;

  // epsilon out of reach: return the lowest-KL rounding found.
  result.epsilon_unreachable = true;
  std::vector<int> a = round_to_box(x, params.max_batch);
  std::vector<int> b(r, median);
  repair(in, a, -1.0);
  repair(in, b, -1.0);
  const double kl_a = kl_of(in, a), kl_b = kl_of(in, b);
  result.batches = kl_a <= kl_b ? a : b;
  result.kl = std::min(kl_a, kl_b);
  result.delta = waiting_increase(in.original, result.batches, in.costs);
  return result;
}

}  // namespace mergesfl
