#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "mergesfl/tensor.h"

namespace mergesfl {

// Categorical distribution over class labels. Construction validates
// non-negativity and that the entries sum to 1 within 1e-9.
class LabelDistribution {
 public:
  LabelDistribution() = default;
  explicit LabelDistribution(std::vector<double> probs);

  static LabelDistribution uniform(std::size_t classes);
  static LabelDistribution one_hot(std::size_t classes, std::size_t index);

  std::size_t classes() const { return probs_.size(); }
  double operator[](std::size_t j) const { return probs_[j]; }
  std::span<const double> probs() const { return probs_; }

  friend bool operator==(const LabelDistribution&, const LabelDistribution&) = default;

 private:
  std::vector<double> probs_;
};

// Empirical class frequencies. Throws ValidationError on empty input or
// labels outside [0, classes).
LabelDistribution label_distribution(std::span<const Label> labels, std::size_t classes);

// Arithmetic mean of the per-worker distributions.
LabelDistribution iid_reference(std::span<const LabelDistribution> workers);

// sum_i w_i V_i / sum_i w_i over the listed members.
LabelDistribution mixture(std::span<const LabelDistribution> dists, std::span<const double> weights);

// Total variation distance, 0.5 * sum |p - q|.
double total_variation(const LabelDistribution& p, const LabelDistribution& q);
// Shannon entropy in nats.
double entropy(const LabelDistribution& p);

struct Dataset {
  Tensor samples;  // [n x dim]
  Labels labels;
  std::size_t classes = 0;

  std::size_t size() const { return labels.size(); }
};

struct Shard {
  Tensor samples;
  Labels labels;
  std::size_t owner = 0;

  std::size_t size() const { return labels.size(); }
};

struct ClusterSpec {
  std::size_t classes = 10;
  std::size_t per_class = 100;
  std::size_t dim = 16;
  // Distance of each class mean from the origin.
  double separation = 3.0;
};

// Gaussian class clusters with unit covariance. When dim >= classes the
// means are the scaled simplex vertices separation * e_j; otherwise they are
// seeded random directions of length `separation`. Rows are class-major.
Dataset generate_dataset(std::uint64_t seed, const ClusterSpec& spec);

struct HoldoutSplit {
  Dataset train;
  Dataset test;
};

// Random split; the test part gets round(fraction * n) rows (at least one).
HoldoutSplit split_holdout(const Dataset& data, double fraction, std::uint64_t seed);

// Marks the IID case of partition_dirichlet (p = 0).
inline constexpr double kIidConcentration = std::numeric_limits<double>::infinity();

// Non-IID label partition. Worker i draws v_i ~ Dir(delta * q), with q the
// global class frequencies, and receives a quota of n/N samples filled to
// match v_i as closely as the remaining pool allows. delta = +inf gives every
// worker q. Shards are disjoint, cover the dataset and are never empty.
std::vector<Shard> partition_dirichlet(const Dataset& data, std::size_t workers, double delta,
                                       std::uint64_t seed);

}  // namespace mergesfl
