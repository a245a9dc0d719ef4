#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mergesfl/common.h"
#include "mergesfl/tensor.h"

namespace mergesfl {

enum class LayerKind { kDense, kRelu };

struct LayerSpec {
  LayerKind kind = LayerKind::kDense;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;

  static LayerSpec dense(std::size_t in, std::size_t out) { return {LayerKind::kDense, in, out}; }
  static LayerSpec relu(std::size_t dim) { return {LayerKind::kRelu, dim, dim}; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

// Throws ShapeError unless dims are positive, relu layers are square and
// adjacent layers chain.
void validate_stack(std::span<const LayerSpec> layers);

// Inputs seen by each layer during a forward pass, tagged with the
// parameter generation that produced them.
struct ActivationCache {
  std::vector<Tensor> layer_inputs;
  std::uint64_t generation = 0;
};

struct ForwardResult {
  Tensor output;
  ActivationCache cache;
};

struct BackwardResult {
  std::vector<Tensor> param_grads;
  Tensor input_grad;
};

// An ordered stack of dense/relu layers with its parameters. Dense layers own
// a weight [in x out] and a bias [out], stored in layer order.
class SubModel {
 public:
  SubModel() = default;
  // Weights and biases drawn uniformly from [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  SubModel(std::vector<LayerSpec> layers, Rng& rng);
  static SubModel zeros(std::vector<LayerSpec> layers);

  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::size_t in_dim() const;
  std::size_t out_dim() const;

  std::span<const Tensor> parameters() const { return params_; }
  std::size_t parameter_count() const;
  // Replaces all parameters; shapes must match the current ones.
  void set_parameters(std::vector<Tensor> params);

  ForwardResult forward(const Tensor& input) const;
  // output_grad is d(loss)/d(output). Throws ContractError if the cache was
  // produced by different parameters.
  BackwardResult backward(const ActivationCache& cache, const Tensor& output_grad) const;

  // p <- p - lr * g for every parameter tensor.
  void apply_gradients(std::span<const Tensor> grads, double lr);

  // Changes whenever parameters change; copies share it until mutated.
  std::uint64_t generation() const { return generation_; }

 private:
  void allocate(double fill);
  void touch();

  std::vector<LayerSpec> layers_;
  std::vector<Tensor> params_;
  std::uint64_t generation_ = 0;
};

// A classifier cut at the split layer: workers hold `bottom`, the parameter
// server holds `top`.
struct SplitModel {
  SubModel bottom;
  SubModel top;

  static SplitModel create(std::vector<LayerSpec> bottom_layers, std::vector<LayerSpec> top_layers,
                           std::uint64_t seed);
  // bottom = dense(input -> hidden) + relu, top = dense(hidden -> classes).
  static SplitModel mlp(std::size_t input_dim, std::size_t hidden, std::size_t classes,
                        std::uint64_t seed);

  std::size_t input_dim() const { return bottom.in_dim(); }
  std::size_t split_width() const { return bottom.out_dim(); }
  std::size_t classes() const { return top.out_dim(); }
};

struct SoftmaxCrossEntropy {
  double loss = 0.0;
  Tensor probabilities;
};

// Mean cross-entropy of softmax(logits) against labels in [0, cols).
SoftmaxCrossEntropy softmax_cross_entropy(const Tensor& logits, std::span<const Label> labels);

struct BottomForward {
  Tensor features;
  ActivationCache cache;
};

struct TopCache {
  ActivationCache layers;
  Tensor probabilities;
  Labels labels;
};

struct TopForward {
  double loss = 0.0;
  TopCache cache;
};

struct TopBackward {
  std::vector<Tensor> param_grads;
  Tensor feature_grads;
};

BottomForward forward_bottom(const SubModel& bottom, const Tensor& batch);
TopForward forward_top(const SubModel& top, const Tensor& features, std::span<const Label> labels);
TopBackward backward_top(const SubModel& top, const TopCache& cache);
std::vector<Tensor> backward_bottom(const SubModel& bottom, const ActivationCache& cache,
                                    const Tensor& feature_grads);

inline BottomForward forward_bottom(const SplitModel& m, const Tensor& batch) {
  return forward_bottom(m.bottom, batch);
}
inline TopForward forward_top(const SplitModel& m, const Tensor& features,
                              std::span<const Label> labels) {
  return forward_top(m.top, features, labels);
}
inline TopBackward backward_top(const SplitModel& m, const TopCache& cache) {
  return backward_top(m.top, cache);
}
inline std::vector<Tensor> backward_bottom(const SplitModel& m, const ActivationCache& cache,
                                           const Tensor& feature_grads) {
  return backward_bottom(m.bottom, cache, feature_grads);
}

// Element-wise p <- p - lr * g. lr must be non-negative.
void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads, double lr);

Labels predict(const SplitModel& model, const Tensor& samples);
double accuracy(const SplitModel& model, const Tensor& samples, std::span<const Label> labels);

}  // namespace mergesfl
