#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mergesfl/common.h"
#include "mergesfl/controller.h"

using namespace mergesfl;

namespace {

LabelDistribution random_simplex(Rng& rng, std::size_t m, double concentration) {
  std::vector<double> v(m);
  double s = 0.0;
  for (double& x : v) {
    std::gamma_distribution<double> g(concentration, 1.0);
    s += (x = g(rng));
  }
  if (!(s > 0.0)) return LabelDistribution::one_hot(m, 0);
  for (double& x : v) x /= s;
  const double again = std::accumulate(v.begin(), v.end(), 0.0);
  for (double& x : v) x /= again;
  return LabelDistribution(v);
}

}  // namespace

// ---- regulation ----------------------------------------------------------

TEST(Regulate, Examples) {
  EXPECT_EQ(regulate_batches(std::vector<double>{0.3, 0.3, 0.3}, 64), (std::vector<int>{64, 64, 64}));
  EXPECT_EQ(regulate_batches(std::vector<double>{1.0, 2.0}, 64), (std::vector<int>{64, 32}));
  EXPECT_EQ(regulate_batches(std::vector<double>{1.0, 100.0}, 64), (std::vector<int>{64, 1}));
  EXPECT_THROW(regulate_batches(std::vector<double>{}, 64), ValidationError);
  EXPECT_THROW(regulate_batches(std::vector<double>{1.0, 0.0}, 64), ValidationError);
}

TEST(Regulate, FloorIsExactOnIntegerCosts) {
  Rng rng = make_rng({41});
  for (int trial = 0; trial < 2000; ++trial) {
    const int dmax = 1 + static_cast<int>(rng() % 128);
    std::vector<long long> ints(1 + rng() % 10);
    for (long long& c : ints) c = 1 + static_cast<long long>(rng() % 1000);
    std::vector<double> costs(ints.begin(), ints.end());
    const long long fastest = *std::min_element(ints.begin(), ints.end());
    const std::vector<int> d = regulate_batches(costs, dmax);
    bool seen_fastest = false;
    for (std::size_t i = 0; i < ints.size(); ++i) {
      long long expect = std::max(1LL, dmax * fastest / ints[i]);
      if (ints[i] == fastest && !seen_fastest) {
        expect = dmax;
        seen_fastest = true;
      }
      EXPECT_EQ(d[i], expect);
    }
  }
}

TEST(Regulate, EstimatesOverloadUsesMuPlusBeta) {
  std::vector<WorkerEstimate> e(2);
  e[0].mu = 0.25;
  e[0].beta = 0.75;
  e[1].mu = 1.0;
  e[1].beta = 2.0;
  EXPECT_EQ(regulate_batches(e, 60), (std::vector<int>{60, 20}));
}

// ---- priorities ----------------------------------------------------------

TEST(Priorities, Examples) {
  EXPECT_EQ(priorities(std::vector<std::size_t>{0, 0}), (std::vector<double>{2.0, 2.0}));
  EXPECT_EQ(priorities(std::vector<std::size_t>{0, 3}), (std::vector<double>{5.0, 1.25}));
}

TEST(Priorities, ShiftPreservesRanking) {
  Rng rng = make_rng({42});
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::size_t> k(2 + rng() % 10);
    for (auto& x : k) x = rng() % 50;
    std::vector<std::size_t> shifted = k;
    for (auto& x : shifted) ++x;
    const std::vector<double> a = priorities(k), b = priorities(shifted);
    for (std::size_t i = 0; i < k.size(); ++i)
      for (std::size_t j = 0; j < k.size(); ++j) EXPECT_EQ(a[i] < a[j], b[i] < b[j]);
  }
}

// ---- KL ------------------------------------------------------------------

TEST(Kl, Examples) {
  const LabelDistribution p({0.2, 0.3, 0.5});
  EXPECT_NEAR(kl_divergence(p, p), 0.0, 1e-12);
  EXPECT_NEAR(kl_divergence(LabelDistribution({1.0, 0.0}), LabelDistribution({0.5, 0.5})), std::log(2.0), 1e-15);
  // 0.5 ln(0.5 / 1) + penalty for the unsupported class
  EXPECT_NEAR(kl_divergence(LabelDistribution({0.5, 0.5}), LabelDistribution({1.0, 0.0})),
              kKlSupportPenalty + 0.5 * std::log(0.5), 1e-6);
  EXPECT_THROW(kl_divergence(p, LabelDistribution({0.5, 0.5})), ValidationError);
}

TEST(Kl, GibbsInequality) {
  Rng rng = make_rng({43});
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t m = 2 + rng() % 10;
    EXPECT_GE(kl_divergence(random_simplex(rng, m, 0.5), random_simplex(rng, m, 0.5)), 0.0);
  }
}

TEST(MergedDistribution, IsBatchWeightedMixture) {
  Rng rng = make_rng({44});
  std::vector<LabelDistribution> v;
  std::vector<int> d;
  std::vector<double> w;
  for (int i = 0; i < 5; ++i) {
    v.push_back(random_simplex(rng, 4, 1.0));
    d.push_back(1 + static_cast<int>(rng() % 20));
    w.push_back(d.back());
  }
  const LabelDistribution a = merged_distribution(d, v), b = mixture(v, w);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(a[j], b[j], 1e-15);
}

// ---- GA ------------------------------------------------------------------

TEST(GeneticSelection, SingleCandidate) {
  const std::vector<int> d = {5};
  const std::vector<LabelDistribution> v = {LabelDistribution({0.3, 0.7})};
  const LabelDistribution ref({0.5, 0.5});
  const SelectionResult r = select_workers_ga({d, v, ref, {}, 10.0, 1.0}, GaParams{}, 1);
  EXPECT_EQ(r.workers, (std::vector<std::size_t>{0}));
  EXPECT_THROW(select_workers_ga({d, v, ref, {}, 4.0, 1.0}, GaParams{}, 1), InfeasibleError);
}

TEST(GeneticSelection, ComplementaryPair) {
  const std::vector<int> d = {8, 8};
  const std::vector<LabelDistribution> v = {LabelDistribution::one_hot(2, 0), LabelDistribution::one_hot(2, 1)};
  const LabelDistribution ref({0.5, 0.5});
  const SelectionResult r = select_workers_ga({d, v, ref, {}, 16.0, 1.0}, GaParams{}, 3);
  EXPECT_EQ(r.workers, (std::vector<std::size_t>{0, 1}));
  EXPECT_NEAR(r.kl, 0.0, 1e-15);
}

TEST(GeneticSelection, ElitistFeasibleAndSeeded) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng = make_rng({seed, 45});
    std::vector<int> d;
    std::vector<LabelDistribution> v;
    for (int i = 0; i < 15; ++i) {
      d.push_back(1 + static_cast<int>(rng() % 64));
      v.push_back(random_simplex(rng, 10, 0.3));
    }
    const LabelDistribution ref = iid_reference(v);
    const double budget = 150.0;
    const SelectionProblem p{d, v, ref, {}, budget, 1.0};
    const SelectionResult r = select_workers_ga(p, GaParams{}, seed);
    ASSERT_FALSE(r.workers.empty());
    EXPECT_TRUE(std::is_sorted(r.workers.begin(), r.workers.end()));
    double spend = 0.0;
    for (std::size_t w : r.workers) spend += d[w];
    EXPECT_LE(spend, budget);
    for (std::size_t g = 1; g < r.best_fitness.size(); ++g) EXPECT_LE(r.best_fitness[g], r.best_fitness[g - 1]);
    EXPECT_EQ(select_workers_ga(p, GaParams{}, seed).workers, r.workers);
  }
}

TEST(GeneticSelection, FitnessPenalizesOverspend) {
  const std::vector<int> d = {6, 6};
  const std::vector<LabelDistribution> v = {LabelDistribution::one_hot(2, 0), LabelDistribution::one_hot(2, 1)};
  const LabelDistribution ref({0.5, 0.5});
  const SelectionProblem p{d, v, ref, {}, 8.0, 1.0};
  const std::vector<std::uint8_t> both = {1, 1}, one = {1, 0}, none = {0, 0};
  EXPECT_NEAR(selection_fitness(p, both), kInfeasibilityWeight * 4.0 / 8.0, 1e-6);
  EXPECT_NEAR(selection_fitness(p, one), std::log(2.0), 1e-12);
  EXPECT_EQ(selection_fitness(p, none), kEmptySetFitness);
}

TEST(GeneticSelection, PriorityBreaksNearTies) {
  // Four interchangeable IID workers; the budget fits two. The least-used pair wins.
  const std::vector<int> d = {4, 4, 4, 4};
  const std::vector<LabelDistribution> v(4, LabelDistribution({0.5, 0.5}));
  const LabelDistribution ref({0.5, 0.5});
  const std::vector<double> prio = priorities(std::vector<std::size_t>{5, 0, 5, 0});
  const SelectionResult r = select_workers_ga({d, v, ref, prio, 8.0, 1.0}, GaParams{}, 2);
  EXPECT_EQ(r.workers, (std::vector<std::size_t>{1, 3}));
}

// ---- fine-tuning ---------------------------------------------------------

TEST(Finetune, AlreadyFeasibleIsUnchanged) {
  const std::vector<int> d = {10, 20, 30};
  const std::vector<LabelDistribution> v(3, LabelDistribution({0.5, 0.5}));
  const std::vector<double> c = {1.0, 2.0, 3.0};
  const LabelDistribution ref({0.5, 0.5});
  const FinetuneResult r = finetune_batches({d, v, c, ref}, FinetuneParams{});
  EXPECT_EQ(r.batches, d);
  EXPECT_EQ(r.delta, 0.0);
  EXPECT_FALSE(r.epsilon_unreachable);
}

TEST(Finetune, TwoOneHotWorkersMoveTheCheaperOne) {
  const std::vector<int> d = {10, 30};
  const std::vector<LabelDistribution> v = {LabelDistribution::one_hot(2, 0), LabelDistribution::one_hot(2, 1)};
  const LabelDistribution ref({0.5, 0.5});
  FinetuneParams params;
  params.epsilon = 0.0;
  // Raising worker 0 costs 20 * 1; lowering worker 1 would cost 20 * 2.
  const std::vector<double> cheap_first = {1.0, 2.0};
  FinetuneResult r = finetune_batches({d, v, cheap_first, ref}, params);
  EXPECT_EQ(r.batches, (std::vector<int>{30, 30}));
  EXPECT_NEAR(r.kl, 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(r.delta, 10.0);
  const std::vector<double> cheap_second = {2.0, 1.0};
  r = finetune_batches({d, v, cheap_second, ref}, params);
  EXPECT_EQ(r.batches, (std::vector<int>{10, 10}));
  EXPECT_DOUBLE_EQ(r.delta, 10.0);
}

TEST(Finetune, UnreachableEpsilonIsFlagged) {
  // Both workers hold class 0 only; the reference also wants class 1.
  const std::vector<int> d = {5, 7};
  const std::vector<LabelDistribution> v(2, LabelDistribution::one_hot(2, 0));
  const std::vector<double> c = {1.0, 1.0};
  const LabelDistribution ref({0.5, 0.5});
  const FinetuneResult r = finetune_batches({d, v, c, ref}, FinetuneParams{});
  EXPECT_TRUE(r.epsilon_unreachable);
  EXPECT_NEAR(r.kl, std::log(2.0), 1e-12);
  for (int x : r.batches) EXPECT_GE(x, 1);
}

TEST(Finetune, DominatesEqualBatchPoint) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng = make_rng({seed, 46});
    std::vector<int> d(6);
    std::vector<double> c(6);
    std::vector<LabelDistribution> v;
    for (std::size_t i = 0; i < 6; ++i) {
      d[i] = 1 + static_cast<int>(rng() % 64);
      c[i] = 0.01 + 0.1 * uniform01(rng);
      v.push_back(random_simplex(rng, 5, 0.7));
    }
    const LabelDistribution ref = iid_reference(v);
    const FinetuneResult r = finetune_batches({d, v, c, ref}, FinetuneParams{});
    ASSERT_FALSE(r.epsilon_unreachable);
    EXPECT_LE(r.kl, 0.05 + 1e-12);
    EXPECT_NEAR(r.kl, kl_divergence(merged_distribution(r.batches, v), ref), 1e-12);
    EXPECT_DOUBLE_EQ(r.delta, waiting_increase(d, r.batches, c));
    double naive = 1e300;
    for (int e = 1; e <= 64; ++e) naive = std::min(naive, waiting_increase(d, std::vector<int>(6, e), c));
    EXPECT_LE(r.delta, naive + 1e-12);
    for (int x : r.batches) {
      EXPECT_GE(x, 1);
      EXPECT_LE(x, 64);
    }
  }
}

TEST(WaitingIncrease, DirectFormula) {
  EXPECT_DOUBLE_EQ(waiting_increase(std::vector<int>{10, 30}, std::vector<int>{12, 25}, std::vector<double>{1.0, 2.0}),
                   (2.0 * 1.0 + 5.0 * 2.0) / 2.0);
}

// ---- scaling -------------------------------------------------------------

TEST(Scale, Examples) {
  EXPECT_EQ(scale_to_budget(std::vector<int>{3, 5}, 8.0, 1.0, 64).batches, (std::vector<int>{3, 5}));
  const ScaleResult r = scale_to_budget(std::vector<int>{2, 2}, 8.0, 1.0, 64);
  EXPECT_EQ(r.batches, (std::vector<int>{4, 4}));
  EXPECT_TRUE(r.proportional);
  EXPECT_THROW(scale_to_budget(std::vector<int>{2, 2, 2}, 2.5, 1.0, 64), InfeasibleError);
}

TEST(Scale, UtilizationAndRatioBounds) {
  Rng rng = make_rng({47});
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t r = 1 + rng() % 8;
    std::vector<int> d(r);
    for (int& x : d) x = 1 + static_cast<int>(rng() % 64);
    const double c = 0.5 + uniform01(rng);
    const double budget = c * static_cast<double>(r) * (1.0 + 80.0 * uniform01(rng));
    const ScaleResult s = scale_to_budget(d, budget, c, 64);
    double spend = 0.0;
    for (int x : s.batches) {
      EXPECT_GE(x, 1);
      EXPECT_LE(x, 64);
      spend += x * c;
    }
    EXPECT_LE(spend, budget);
    if (!s.proportional) continue;
    const bool capped = *std::max_element(s.batches.begin(), s.batches.end()) == 64;
    if (!capped) {
      EXPECT_GE(spend / budget, 1.0 - static_cast<double>(r) * c / budget - 1e-12);
    }
    const int lo = *std::min_element(s.batches.begin(), s.batches.end());
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < r; ++j)
        EXPECT_LE(std::abs(static_cast<double>(s.batches[i]) / s.batches[j] - static_cast<double>(d[i]) / d[j]),
                  static_cast<double>(d[i]) / d[j] / lo + 1e-12);
  }
}

// ---- full plan -----------------------------------------------------------

TEST(BuildPlan, SingleWorker) {
  std::vector<WorkerEstimate> e(1);
  e[0].mu = 0.01;
  e[0].beta = 0.02;
  e[0].distribution = LabelDistribution({0.5, 0.5});
  ControllerConfig cfg;
  MergePlan p = build_plan(e, e[0].distribution, 40.0, cfg, 1);
  EXPECT_EQ(p.workers, (std::vector<std::size_t>{0}));
  EXPECT_EQ(p.batches, (std::vector<int>{40}));
  EXPECT_EQ(e[0].participations, 1u);
  p = build_plan(e, e[0].distribution, 1000.0, cfg, 1);
  EXPECT_EQ(p.batches, (std::vector<int>{64}));
  EXPECT_EQ(e[0].participations, 2u);
}

TEST(BuildPlan, HomogeneousIidWorkers) {
  std::vector<WorkerEstimate> e(6);
  for (WorkerEstimate& w : e) {
    w.mu = 0.01;
    w.beta = 0.01;
    w.distribution = LabelDistribution::uniform(4);
  }
  const MergePlan p = build_plan(e, LabelDistribution::uniform(4), 200.0, ControllerConfig{}, 5);
  EXPECT_NEAR(p.kl, 0.0, 1e-12);
  for (int x : p.batches) EXPECT_EQ(x, p.batches.front());
  EXPECT_LE(p.planned_spend, 200.0);
}

TEST(BuildPlan, BruteForceFixtureEndToEnd) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng = make_rng({seed, 48});
    std::vector<WorkerEstimate> e(12);
    std::vector<LabelDistribution> v;
    for (WorkerEstimate& w : e) {
      const double cost = 0.01 * std::exp(uniform01(rng) * std::log(10.0));
      w.mu = 0.4 * cost;
      w.beta = 0.6 * cost;
      w.distribution = random_simplex(rng, 10, 0.3);
      v.push_back(w.distribution);
    }
    const LabelDistribution ref = iid_reference(v);
    const double budget = 6 * 32.0;
    const MergePlan p = build_plan(e, ref, budget, ControllerConfig{}, seed);
    EXPECT_NO_THROW(validate_plan(p));
    EXPECT_LE(p.planned_spend, budget);
    if (!p.epsilon_unreachable) {
      EXPECT_LE(p.kl, 0.05 + 1e-12);
    }
    std::size_t selected = 0;
    for (const WorkerEstimate& w : e) selected += w.participations;
    EXPECT_EQ(selected, p.workers.size());
  }
}

TEST(BuildPlan, ShrinksMaxBatchWhenNothingFits) {
  std::vector<WorkerEstimate> e(3);
  for (WorkerEstimate& w : e) {
    w.mu = 0.01;
    w.beta = 0.01;
    w.distribution = LabelDistribution::uniform(2);
  }
  const MergePlan p = build_plan(e, LabelDistribution::uniform(2), 20.0, ControllerConfig{}, 1);
  EXPECT_GT(p.retries, 0u);
  EXPECT_LE(p.planned_spend, 20.0);
  std::vector<WorkerEstimate> tiny(e);
  EXPECT_THROW(build_plan(tiny, LabelDistribution::uniform(2), 0.5, ControllerConfig{}, 1), InfeasibleError);
}

TEST(ValidatePlan, RejectsBrokenPlans) {
  MergePlan p;
  EXPECT_THROW(validate_plan(p), ContractError);
  p.workers = {2, 1};
  p.batches = {1, 1};
  p.budget = 10.0;
  p.planned_spend = 2.0;
  EXPECT_THROW(validate_plan(p), ContractError);
  p.workers = {1, 2};
  p.batches = {1, 0};
  EXPECT_THROW(validate_plan(p), ContractError);
  p.batches = {1, 1};
  p.planned_spend = 11.0;
  EXPECT_THROW(validate_plan(p), ContractError);
  p.planned_spend = 2.0;
  EXPECT_NO_THROW(validate_plan(p));
  EXPECT_EQ(p.batch_of(2), 1);
  EXPECT_EQ(p.batch_of(7), 0);
  EXPECT_EQ(p.total_batch(), 2);
}
