#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "mergesfl/common.h"
#include "mergesfl/data.h"
#include "mergesfl/model.h"
#include "mergesfl/sim_env.h"

namespace mergesfl {

enum class Mode { kMergeSfl, kSflT, kFixedBatch };

std::string_view mode_name(Mode mode);
// Accepts "mergesfl", "sfl_t" and "fixed_batch".
Mode parse_mode(std::string_view name);

// One worker's smashed data for one local iteration.
struct FeatureBatch {
  std::size_t worker = 0;
  Tensor features;  // [d_i x split]
  Labels labels;
  ActivationCache cache;  // bottom activations, for the dispatched gradient
};

struct Segment {
  std::size_t worker = 0;
  std::size_t start = 0;
  std::size_t length = 0;
};

struct MergedSequence {
  Tensor features;
  Labels labels;
  std::vector<Segment> offsets;  // partitions the rows in merge order
};

// d row indices into a shard of `shard_size` rows: without replacement when
// the shard is large enough, otherwise with replacement.
std::vector<std::size_t> sample_indices(std::size_t shard_size, int batch, Rng& rng);

// Samples d rows from the shard and runs the worker's bottom model on them.
FeatureBatch local_iteration_forward(std::size_t worker, const SubModel& bottom, const Shard& shard, int batch,
                                     Rng& rng);

// Concatenates the batches in `order` (worker ids). Throws ProtocolError when
// a worker in `order` has no batch or a batch has no place in `order`.
MergedSequence merge(std::span<const FeatureBatch> batches, std::span<const std::size_t> order);

// Inverse of merge: the per-worker feature blocks in merge order.
std::vector<Tensor> segment(const MergedSequence& merged);

struct TopStep {
  double loss = 0.0;
  Tensor feature_grads;  // d(mean loss)/d(features) before the step
};

// Mean cross-entropy over all merged rows; the top model is stepped by lr.
TopStep top_update(SubModel& top, const MergedSequence& merged, double lr);

// Slices merged feature gradients back into per-worker blocks.
std::vector<Tensor> dispatch(const Tensor& feature_grads, std::span<const Segment> offsets);

// lr_base * d / max_batch.
double bottom_lr(double lr_base, int batch, int max_batch);

void bottom_update(SubModel& bottom, const FeatureBatch& batch, const Tensor& feature_grads, double lr);

// sum_i w_i theta_i / sum_i w_i, parameter-wise.
SubModel aggregate_bottoms(std::span<const SubModel> bottoms, std::span<const double> weights);

struct RoundAssignment {
  std::vector<std::size_t> workers;  // ascending
  std::vector<int> batches;          // aligned with workers
};

struct RoundContext {
  const std::vector<Shard>& shards;  // indexed by worker id
  const Dataset& test;
  const LabelDistribution& reference;
  std::span<const double> costs;  // true mu + beta this round, by worker id
  std::size_t tau = 10;
  int max_batch = 64;
  double lr_top = 0.1;
  double lr_bottom = 0.1;
  std::uint64_t seed = 0;
  std::size_t round = 0;
};

struct RoundResult {
  double completion = 0.0;
  double avg_wait = 0.0;      // over the selected workers
  double avg_wait_all = 0.0;  // the same idle time spread over all N workers
  double realized_kl = 0.0;   // mean over iterations of the merged labels' KL
  double train_loss = 0.0;    // mean over iterations
  double test_accuracy = 0.0;
};

// tau local iterations of the mode followed by bottom aggregation.
//   mergesfl, fixed_batch: merged top update, dispatched gradients, bottom
//     lr proportional to d_i, batch-weighted aggregation.
//   sfl_t: per-worker top gradients accumulated (weights d_i / sum d) into
//     one step, per-worker mean feature gradients, bottom lr = lr_bottom,
//     plain-mean aggregation.
RoundResult run_round(Mode mode, SplitModel& model, const RoundAssignment& assignment, const RoundContext& context);

}  // namespace mergesfl
