#include "mergesfl/data.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "mergesfl/common.h"

namespace mergesfl {
namespace {

constexpr double kSimplexTolerance = 1e-9;

// Splits `total` units across weights by largest remainder; ties go to the
// lower index. Zero-weight entries receive nothing.
std::vector<std::size_t> apportion(std::size_t total, std::span<const double> weights) {
  std::vector<std::size_t> out(weights.size(), 0);
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (total == 0 || !(sum > 0.0)) return out;
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t j = 0; j < weights.size(); ++j) {
    if (!(weights[j] > 0.0)) continue;
    const double exact = static_cast<double>(total) * weights[j] / sum;
    const auto whole = static_cast<std::size_t>(std::floor(exact));
    out[j] = whole;
    assigned += whole;
    remainders.emplace_back(exact - static_cast<double>(whole), j);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < total && k < remainders.size(); ++k, ++assigned) {
    ++out[remainders[k].second];
  }
  // Floating rounding can leave a unit unassigned; hand it to the heaviest class.
  while (assigned < total) {
    const auto heaviest = static_cast<std::size_t>(std::max_element(weights.begin(), weights.end()) - weights.begin());
    ++out[heaviest];
    ++assigned;
  }
  return out;
}

// Class counts for one worker's quota: follow `target` as far as the stock
// allows, then spread the remainder over classes still in stock.
std::vector<std::size_t> allocate_quota(std::size_t quota, std::span<const double> target,
                                        std::span<const std::size_t> stock) {
  const std::size_t m = target.size();
  std::vector<std::size_t> counts(m, 0);
  std::size_t left = quota;
  while (left > 0) {
    std::vector<double> weights(m, 0.0);
    double mass = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (stock[j] > counts[j]) {
        weights[j] = target[j];
        mass += target[j];
      }
    }
    if (!(mass > 0.0)) {
      for (std::size_t j = 0; j < m; ++j) weights[j] = static_cast<double>(stock[j] - counts[j]);
    }
    const std::vector<std::size_t> want = apportion(left, weights);
    std::size_t taken = 0;
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t take = std::min(want[j], stock[j] - counts[j]);
      counts[j] += take;
      taken += take;
    }
    if (taken == 0) throw InfeasibleError("partition: sample pool exhausted");
    left -= taken;
  }
  return counts;
}

std::vector<double> draw_dirichlet(Rng& rng, std::span<const double> alpha) {
  std::vector<double> v(alpha.size(), 0.0);
  double sum = 0.0;
  for (std::size_t j = 0; j < alpha.size(); ++j) {
    if (!(alpha[j] > 0.0)) continue;
    std::gamma_distribution<double> gamma(alpha[j], 1.0);
    v[j] = gamma(rng);
    sum += v[j];
  }
  if (sum > 0.0) {
    for (double& x : v) x /= sum;
  }
  return v;
}

Dataset take_rows(const Dataset& data, std::vector<std::size_t> idx) {
  std::sort(idx.begin(), idx.end());
  Dataset out;
  out.classes = data.classes;
  out.samples = gather_rows(data.samples, idx);
  out.labels.reserve(idx.size());
  for (std::size_t i : idx) out.labels.push_back(data.labels[i]);
  return out;
}

}  // namespace

LabelDistribution::LabelDistribution(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.empty()) throw ValidationError("label distribution needs at least one class");
  double sum = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw ValidationError("label distribution has a negative or non-finite entry");
    sum += p;
  }
  if (std::abs(sum - 1.0) > kSimplexTolerance) {
    throw ValidationError("label distribution sums to " + std::to_string(sum) + ", not 1");
  }
}

LabelDistribution LabelDistribution::uniform(std::size_t classes) {
  if (classes == 0) throw ValidationError("uniform: zero classes");
  return LabelDistribution(std::vector<double>(classes, 1.0 / static_cast<double>(classes)));
}

LabelDistribution LabelDistribution::one_hot(std::size_t classes, std::size_t index) {
  if (index >= classes) throw ValidationError("one_hot: index outside class range");
  std::vector<double> p(classes, 0.0);
  p[index] = 1.0;
  return LabelDistribution(std::move(p));
}

LabelDistribution label_distribution(std::span<const Label> labels, std::size_t classes) {
  if (labels.empty()) throw ValidationError("label_distribution: empty input");
  if (classes == 0) throw ValidationError("label_distribution: zero classes");
  std::vector<double> counts(classes, 0.0);
  for (Label y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw ValidationError("label_distribution: label " + std::to_string(y) + " outside [0, " +
                            std::to_string(classes) + ")");
    }
    counts[static_cast<std::size_t>(y)] += 1.0;
  }
  const double n = static_cast<double>(labels.size());
  for (double& c : counts) c /= n;
  return LabelDistribution(std::move(counts));
}

LabelDistribution iid_reference(std::span<const LabelDistribution> workers) {
  if (workers.empty()) throw ValidationError("iid_reference: no workers");
  const std::size_t m = workers.front().classes();
  std::vector<double> mean(m, 0.0);
  for (const LabelDistribution& v : workers) {
    if (v.classes() != m) throw ValidationError("iid_reference: class count mismatch");
    for (std::size_t j = 0; j < m; ++j) mean[j] += v[j];
  }
  const double n = static_cast<double>(workers.size());
  for (double& x : mean) x /= n;
  return LabelDistribution(std::move(mean));
}

LabelDistribution mixture(std::span<const LabelDistribution> dists, std::span<const double> weights) {
  if (dists.empty() || dists.size() != weights.size()) throw ValidationError("mixture: size mismatch");
  const std::size_t m = dists.front().classes();
  std::vector<double> acc(m, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < dists.size(); ++i) {
    if (dists[i].classes() != m) throw ValidationError("mixture: class count mismatch");
    if (!(weights[i] >= 0.0)) throw ValidationError("mixture: negative weight");
    total += weights[i];
    for (std::size_t j = 0; j < m; ++j) acc[j] += weights[i] * dists[i][j];
  }
  if (!(total > 0.0)) throw ValidationError("mixture: weights sum to zero");
  for (double& x : acc) x /= total;
  return LabelDistribution(std::move(acc));
}

double total_variation(const LabelDistribution& p, const LabelDistribution& q) {
  if (p.classes() != q.classes()) throw ValidationError("total_variation: class count mismatch");
  double s = 0.0;
  for (std::size_t j = 0; j < p.classes(); ++j) s += std::abs(p[j] - q[j]);
  return 0.5 * s;
}

double entropy(const LabelDistribution& p) {
  double h = 0.0;
  for (double x : p.probs()) {
    if (x > 0.0) h -= x * std::log(x);
  }
  return h;
}

Dataset generate_dataset(std::uint64_t seed, const ClusterSpec& spec) {
  if (spec.classes < 2) throw ValidationError("generate_dataset: need at least 2 classes");
  if (spec.per_class < 1) throw ValidationError("generate_dataset: per_class must be >= 1");
  if (spec.dim < 1) throw ValidationError("generate_dataset: dim must be >= 1");
  if (!(spec.separation >= 0.0)) throw ValidationError("generate_dataset: separation must be >= 0");

  Rng rng = make_rng({seed, 0x44415441ULL});
  std::normal_distribution<double> normal(0.0, 1.0);

  Tensor means = Tensor::matrix(spec.classes, spec.dim);
  if (spec.dim >= spec.classes) {
    for (std::size_t j = 0; j < spec.classes; ++j) means(j, j) = spec.separation;
  } else {
    for (std::size_t j = 0; j < spec.classes; ++j) {
      double norm = 0.0;
      while (!(norm > 1e-12)) {
        norm = 0.0;
        for (double& v : means.row(j)) {
          v = normal(rng);
          norm += v * v;
        }
      }
      norm = std::sqrt(norm);
      for (double& v : means.row(j)) v *= spec.separation / norm;
    }
  }

  Dataset out;
  out.classes = spec.classes;
  out.samples = Tensor::matrix(spec.classes * spec.per_class, spec.dim);
  out.labels.reserve(spec.classes * spec.per_class);
  std::size_t r = 0;
  for (std::size_t j = 0; j < spec.classes; ++j) {
    for (std::size_t k = 0; k < spec.per_class; ++k, ++r) {
      for (std::size_t c = 0; c < spec.dim; ++c) out.samples(r, c) = means(j, c) + normal(rng);
      out.labels.push_back(static_cast<Label>(j));
    }
  }
  return out;
}

HoldoutSplit split_holdout(const Dataset& data, double fraction, std::uint64_t seed) {
  const std::size_t n = data.size();
  if (n < 2) throw ValidationError("split_holdout: need at least two samples");
  if (!(fraction > 0.0 && fraction < 1.0)) throw ValidationError("split_holdout: fraction must be in (0, 1)");
  auto n_test = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  n_test = std::clamp<std::size_t>(n_test, 1, n - 1);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng = make_rng({seed, 0x484f4c44ULL});
  std::shuffle(perm.begin(), perm.end(), rng);
  HoldoutSplit split;
  split.test = take_rows(data, {perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_test)});
  split.train = take_rows(data, {perm.begin() + static_cast<std::ptrdiff_t>(n_test), perm.end()});
  return split;
}

std::vector<Shard> partition_dirichlet(const Dataset& data, std::size_t workers, double delta,
                                       std::uint64_t seed) {
  const std::size_t n = data.size();
  if (workers == 0) throw ValidationError("partition_dirichlet: zero workers");
  if (!(delta > 0.0)) throw ValidationError("partition_dirichlet: delta must be > 0 (or +inf for IID)");
  if (workers > n) {
    throw InfeasibleError("partition_dirichlet: " + std::to_string(workers) + " workers but only " +
                          std::to_string(n) + " samples");
  }
  const std::size_t m = data.classes;
  const LabelDistribution prior = label_distribution(data.labels, m);

  Rng rng = make_rng({seed, 0x50415254ULL});
  std::vector<std::vector<std::size_t>> pools(m);
  for (std::size_t i = 0; i < n; ++i) pools[static_cast<std::size_t>(data.labels[i])].push_back(i);
  for (auto& pool : pools) std::shuffle(pool.begin(), pool.end(), rng);

  std::vector<double> alpha(m);
  for (std::size_t j = 0; j < m; ++j) alpha[j] = std::isinf(delta) ? 0.0 : delta * prior[j];

  std::vector<Shard> shards;
  shards.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t quota = n / workers + (w < n % workers ? 1 : 0);
    std::vector<double> target = std::isinf(delta) ? std::vector<double>(prior.probs().begin(), prior.probs().end())
                                                   : draw_dirichlet(rng, alpha);
    std::vector<std::size_t> stock(m);
    for (std::size_t j = 0; j < m; ++j) stock[j] = pools[j].size();
    const std::vector<std::size_t> counts = allocate_quota(quota, target, stock);

    std::vector<std::size_t> idx;
    idx.reserve(quota);
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t k = 0; k < counts[j]; ++k) {
        idx.push_back(pools[j].back());
        pools[j].pop_back();
      }
    }
    Dataset part = take_rows(data, std::move(idx));
    shards.push_back(Shard{std::move(part.samples), std::move(part.labels), w});
  }
  return shards;
}

}  // namespace mergesfl
