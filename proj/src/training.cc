#include "mergesfl/training.h"

#include <algorithm>
#include <numeric>
#include <string>

#include "mergesfl/controller.h"

namespace mergesfl {
namespace {

constexpr std::uint64_t kSamplingStream = 0x53414d50ULL;

std::size_t pick(Rng& rng, std::size_t n) {
  return std::min(n - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)));
}

void check_assignment(const RoundAssignment& a, const RoundContext& ctx) {
  if (a.workers.empty()) throw ValidationError("run_round: no workers assigned");
  if (a.workers.size() != a.batches.size()) throw ValidationError("run_round: workers and batches misaligned");
  for (std::size_t i = 0; i < a.workers.size(); ++i) {
    if (i > 0 && a.workers[i] <= a.workers[i - 1]) throw ValidationError("run_round: workers must be ascending");
    if (a.workers[i] >= ctx.shards.size() || a.workers[i] >= ctx.costs.size()) {
      throw ValidationError("run_round: unknown worker " + std::to_string(a.workers[i]));
    }
    if (a.batches[i] < 1) throw ValidationError("run_round: batches must be >= 1");
  }
}

struct IterationOutput {
  double loss = 0.0;
  Labels labels;
};

// One merged iteration (mergesfl and fixed_batch).
IterationOutput merged_iteration(SplitModel& model, std::vector<SubModel>& bottoms, const RoundAssignment& a,
                                 const RoundContext& ctx, std::vector<Rng>& streams) {
  std::vector<FeatureBatch> batches;
  batches.reserve(a.workers.size());
  for (std::size_t i = 0; i < a.workers.size(); ++i) {
    const std::size_t w = a.workers[i];
    batches.push_back(local_iteration_forward(w, bottoms[i], ctx.shards[w], a.batches[i], streams[i]));
  }
  MergedSequence merged = merge(batches, a.workers);
  TopStep step = top_update(model.top, merged, ctx.lr_top);
  const std::vector<Tensor> grads = dispatch(step.feature_grads, merged.offsets);
  for (std::size_t i = 0; i < a.workers.size(); ++i) {
    bottom_update(bottoms[i], batches[i], grads[i], bottom_lr(ctx.lr_bottom, a.batches[i], ctx.max_batch));
  }
  return {step.loss, std::move(merged.labels)};
}

// One SFL-T iteration: each worker's features pass through the current top
// model on their own; top gradients are accumulated, then applied once.
IterationOutput sequential_iteration(SplitModel& model, std::vector<SubModel>& bottoms, const RoundAssignment& a,
                                     const RoundContext& ctx, std::vector<Rng>& streams) {
  const double total = std::accumulate(a.batches.begin(), a.batches.end(), 0.0);
  std::vector<Tensor> top_grads;
  IterationOutput out;
  for (std::size_t i = 0; i < a.workers.size(); ++i) {
    const std::size_t w = a.workers[i];
    const FeatureBatch batch = local_iteration_forward(w, bottoms[i], ctx.shards[w], a.batches[i], streams[i]);
    const TopForward fwd = forward_top(model.top, batch.features, batch.labels);
    TopBackward bwd = backward_top(model.top, fwd.cache);
    const double weight = a.batches[i] / total;
    if (top_grads.empty()) {
      top_grads = std::vector<Tensor>(bwd.param_grads.size());
      for (std::size_t p = 0; p < bwd.param_grads.size(); ++p) top_grads[p] = Tensor(bwd.param_grads[p].shape());
    }
    for (std::size_t p = 0; p < top_grads.size(); ++p) {
      auto dst = top_grads[p].data();
      const auto src = bwd.param_grads[p].data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += weight * src[k];
    }
    out.loss += weight * fwd.loss;
    bottom_update(bottoms[i], batch, bwd.feature_grads, ctx.lr_bottom);
    out.labels.insert(out.labels.end(), batch.labels.begin(), batch.labels.end());
  }
  model.top.apply_gradients(top_grads, ctx.lr_top);
  return out;
}

}  // namespace

std::string_view mode_name(Mode mode) {
  switch (mode) {
    case Mode::kMergeSfl:
      return "mergesfl";
    case Mode::kSflT:
      return "sfl_t";
    case Mode::kFixedBatch:
      return "fixed_batch";
  }
  return "unknown";
}

Mode parse_mode(std::string_view name) {
  for (Mode m : {Mode::kMergeSfl, Mode::kSflT, Mode::kFixedBatch}) {
    if (mode_name(m) == name) return m;
  }
  throw ValidationError("unknown mode '" + std::string(name) + "' (expected mergesfl, sfl_t or fixed_batch)");
}

std::vector<std::size_t> sample_indices(std::size_t shard_size, int batch, Rng& rng) {
  if (shard_size == 0) throw ValidationError("sample_indices: empty shard");
  if (batch < 1) throw ValidationError("sample_indices: batch must be >= 1");
  const auto d = static_cast<std::size_t>(batch);
  std::vector<std::size_t> out(d);
  if (d > shard_size) {
    for (std::size_t& i : out) i = pick(rng, shard_size);
    return out;
  }
  std::vector<std::size_t> pool(shard_size);
  std::iota(pool.begin(), pool.end(), 0);
  for (std::size_t k = 0; k < d; ++k) {
    std::swap(pool[k], pool[k + pick(rng, shard_size - k)]);
    out[k] = pool[k];
  }
  return out;
}

FeatureBatch local_iteration_forward(std::size_t worker, const SubModel& bottom, const Shard& shard, int batch,
                                     Rng& rng) {
  const std::vector<std::size_t> rows = sample_indices(shard.size(), batch, rng);
  FeatureBatch out;
  out.worker = worker;
  BottomForward fwd = forward_bottom(bottom, gather_rows(shard.samples, rows));
  out.features = std::move(fwd.features);
  out.cache = std::move(fwd.cache);
  out.labels.reserve(rows.size());
  for (std::size_t r : rows) out.labels.push_back(shard.labels[r]);
  return out;
}

MergedSequence merge(std::span<const FeatureBatch> batches, std::span<const std::size_t> order) {
  if (order.empty()) throw ProtocolError("merge: empty merge order");
  if (batches.size() != order.size()) {
    throw ProtocolError("merge: " + std::to_string(batches.size()) + " batches for " + std::to_string(order.size()) +
                        " workers");
  }
  MergedSequence out;
  std::vector<Tensor> parts;
  parts.reserve(order.size());
  std::size_t start = 0;
  for (std::size_t w : order) {
    const auto it = std::find_if(batches.begin(), batches.end(), [w](const FeatureBatch& b) { return b.worker == w; });
    if (it == batches.end()) throw ProtocolError("merge: missing features from worker " + std::to_string(w));
    if (it->features.rows() != it->labels.size()) throw ProtocolError("merge: feature/label count mismatch");
    parts.push_back(it->features);
    out.labels.insert(out.labels.end(), it->labels.begin(), it->labels.end());
    out.offsets.push_back({w, start, it->labels.size()});
    start += it->labels.size();
  }
  out.features = concat_rows(parts);
  return out;
}

std::vector<Tensor> segment(const MergedSequence& merged) { return dispatch(merged.features, merged.offsets); }

TopStep top_update(SubModel& top, const MergedSequence& merged, double lr) {
  const TopForward fwd = forward_top(top, merged.features, merged.labels);
  TopBackward bwd = backward_top(top, fwd.cache);
  top.apply_gradients(bwd.param_grads, lr);
  return {fwd.loss, std::move(bwd.feature_grads)};
}

std::vector<Tensor> dispatch(const Tensor& feature_grads, std::span<const Segment> offsets) {
  std::size_t expected = 0;
  std::vector<Tensor> out;
  out.reserve(offsets.size());
  for (const Segment& s : offsets) {
    if (s.start != expected || s.length == 0) throw ProtocolError("dispatch: offsets do not partition the rows");
    expected += s.length;
    if (expected > feature_grads.rows()) throw ProtocolError("dispatch: offsets run past the gradient rows");
    out.push_back(slice_rows(feature_grads, s.start, s.length));
  }
  if (expected != feature_grads.rows()) throw ProtocolError("dispatch: offsets do not cover the gradient rows");
  return out;
}

double bottom_lr(double lr_base, int batch, int max_batch) {
  if (max_batch < 1 || batch < 0) throw ValidationError("bottom_lr: bad batch sizes");
  return lr_base * static_cast<double>(batch) / static_cast<double>(max_batch);
}

void bottom_update(SubModel& bottom, const FeatureBatch& batch, const Tensor& feature_grads, double lr) {
  const std::vector<Tensor> grads = backward_bottom(bottom, batch.cache, feature_grads);
  bottom.apply_gradients(grads, lr);
}

SubModel aggregate_bottoms(std::span<const SubModel> bottoms, std::span<const double> weights) {
  if (bottoms.empty()) throw ValidationError("aggregate_bottoms: no models");
  if (weights.size() != bottoms.size()) throw ValidationError("aggregate_bottoms: weight count mismatch");
  double total = 0.0;
  for (double w : weights) {
    if (!(w > 0.0)) throw ValidationError("aggregate_bottoms: weights must be positive");
    total += w;
  }
  const SubModel& first = bottoms.front();
  std::vector<Tensor> sum;
  for (const Tensor& p : first.parameters()) sum.emplace_back(p.shape());
  for (std::size_t i = 0; i < bottoms.size(); ++i) {
    if (bottoms[i].layers() != first.layers()) throw ShapeError("aggregate_bottoms: architectures differ");
    const double share = weights[i] / total;
    const auto params = bottoms[i].parameters();
    for (std::size_t p = 0; p < sum.size(); ++p) {
      auto dst = sum[p].data();
      const auto src = params[p].data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += share * src[k];
    }
  }
  SubModel out = first;
  out.set_parameters(std::move(sum));
  return out;
}

RoundResult run_round(Mode mode, SplitModel& model, const RoundAssignment& a, const RoundContext& ctx) {
  check_assignment(a, ctx);
  RoundResult result;

  std::vector<double> durations;
  for (std::size_t i = 0; i < a.workers.size(); ++i) {
    const double c = ctx.costs[a.workers[i]];
    durations.push_back(duration(static_cast<double>(ctx.tau), a.batches[i], c, 0.0));
  }
  const RoundTimes times = round_times(durations);
  result.completion = times.completion;
  result.avg_wait = times.avg_wait;
  result.avg_wait_all = times.avg_wait * static_cast<double>(a.workers.size()) / static_cast<double>(ctx.costs.size());

  if (ctx.tau > 0) {
    std::vector<SubModel> bottoms(a.workers.size(), model.bottom);
    std::vector<Rng> streams;
    for (std::size_t w : a.workers) streams.push_back(make_rng({ctx.seed, kSamplingStream, w, ctx.round}));

    for (std::size_t k = 0; k < ctx.tau; ++k) {
      const IterationOutput it = mode == Mode::kSflT ? sequential_iteration(model, bottoms, a, ctx, streams)
                                                     : merged_iteration(model, bottoms, a, ctx, streams);
      result.train_loss += it.loss;
      result.realized_kl += kl_divergence(label_distribution(it.labels, ctx.reference.classes()), ctx.reference);
    }
    result.train_loss /= static_cast<double>(ctx.tau);
    result.realized_kl /= static_cast<double>(ctx.tau);

    std::vector<double> weights(a.workers.size(), 1.0);
    if (mode != Mode::kSflT) weights.assign(a.batches.begin(), a.batches.end());
    model.bottom = aggregate_bottoms(bottoms, weights);
  }
  result.test_accuracy = accuracy(model, ctx.test.samples, ctx.test.labels);
  return result;
}

}  // namespace mergesfl
