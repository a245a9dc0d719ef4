#include "mergesfl/model.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>

namespace mergesfl {
namespace {

std::atomic<std::uint64_t> next_generation{1};

std::uint64_t fresh_generation() { return next_generation.fetch_add(1, std::memory_order_relaxed); }

void check_labels(std::span<const Label> labels, std::size_t rows, std::size_t classes) {
  if (labels.size() != rows) {
    throw ShapeError("label count " + std::to_string(labels.size()) + " does not match " +
                     std::to_string(rows) + " rows");
  }
  for (Label y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw ValidationError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

}  // namespace

void validate_stack(std::span<const LayerSpec> layers) {
  if (layers.empty()) throw ShapeError("layer stack is empty");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    if (l.in_dim == 0 || l.out_dim == 0) throw ShapeError("layer " + std::to_string(i) + " has a zero dimension");
    if (l.kind == LayerKind::kRelu && l.in_dim != l.out_dim) {
      throw ShapeError("relu layer " + std::to_string(i) + " must have in_dim == out_dim");
    }
    if (i > 0 && layers[i - 1].out_dim != l.in_dim) {
      throw ShapeError("layer " + std::to_string(i) + " input " + std::to_string(l.in_dim) +
                       " does not match previous output " + std::to_string(layers[i - 1].out_dim));
    }
  }
}

SubModel::SubModel(std::vector<LayerSpec> layers, Rng& rng) : layers_(std::move(layers)) {
  allocate(0.0);
  std::size_t p = 0;
  for (const LayerSpec& l : layers_) {
    if (l.kind != LayerKind::kDense) continue;
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.in_dim));
    for (int k = 0; k < 2; ++k, ++p) {
      for (double& v : params_[p].data()) v = bound * (2.0 * uniform01(rng) - 1.0);
    }
  }
}

SubModel SubModel::zeros(std::vector<LayerSpec> layers) {
  SubModel m;
  m.layers_ = std::move(layers);
  m.allocate(0.0);
  return m;
}

void SubModel::allocate(double fill) {
  validate_stack(layers_);
  params_.clear();
  for (const LayerSpec& l : layers_) {
    if (l.kind != LayerKind::kDense) continue;
    params_.emplace_back(std::vector<std::size_t>{l.in_dim, l.out_dim}, fill);
    params_.emplace_back(std::vector<std::size_t>{l.out_dim}, fill);
  }
  touch();
}

void SubModel::touch() { generation_ = fresh_generation(); }

std::size_t SubModel::in_dim() const { return layers_.empty() ? 0 : layers_.front().in_dim; }
std::size_t SubModel::out_dim() const { return layers_.empty() ? 0 : layers_.back().out_dim; }

std::size_t SubModel::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor& t : params_) n += t.size();
  return n;
}

void SubModel::set_parameters(std::vector<Tensor> params) {
  if (params.size() != params_.size()) throw ShapeError("set_parameters: tensor count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].same_shape(params_[i])) {
      throw ShapeError("set_parameters: tensor " + std::to_string(i) + " has shape " +
                       shape_string(params[i].shape()) + ", expected " + shape_string(params_[i].shape()));
    }
    require_finite(params[i], "set_parameters");
  }
  params_ = std::move(params);
  touch();
}

ForwardResult SubModel::forward(const Tensor& input) const {
  if (input.rank() != 2 || input.cols() != in_dim()) {
    throw ShapeError("forward: input " + shape_string(input.shape()) + " for model with input width " +
                     std::to_string(in_dim()));
  }
  ForwardResult result;
  result.cache.generation = generation_;
  result.cache.layer_inputs.reserve(layers_.size());
  Tensor x = input;
  std::size_t p = 0;
  for (const LayerSpec& l : layers_) {
    result.cache.layer_inputs.push_back(x);
    if (l.kind == LayerKind::kDense) {
      Tensor y = matmul(x, params_[p]);
      add_row_vector(y, params_[p + 1]);
      p += 2;
      x = std::move(y);
    } else {
      for (double& v : x.data()) v = v > 0.0 ? v : 0.0;
    }
  }
  require_finite(x, "forward");
  result.output = std::move(x);
  return result;
}

BackwardResult SubModel::backward(const ActivationCache& cache, const Tensor& output_grad) const {
  if (cache.generation != generation_ || cache.layer_inputs.size() != layers_.size()) {
    throw ContractError("backward: activation cache does not belong to the current parameters");
  }
  const std::size_t rows = cache.layer_inputs.front().rows();
  if (output_grad.rank() != 2 || output_grad.rows() != rows || output_grad.cols() != out_dim()) {
    throw ShapeError("backward: gradient " + shape_string(output_grad.shape()) + " for " +
                     std::to_string(rows) + " rows of width " + std::to_string(out_dim()));
  }
  BackwardResult result;
  result.param_grads.resize(params_.size());
  Tensor g = output_grad;
  std::size_t p = params_.size();
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const Tensor& x = cache.layer_inputs[li];
    if (layers_[li].kind == LayerKind::kDense) {
      p -= 2;
      result.param_grads[p] = matmul_at_b(x, g);
      result.param_grads[p + 1] = column_sums(g);
      g = matmul_a_bt(g, params_[p]);
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (!(x[i] > 0.0)) g[i] = 0.0;
      }
    }
  }
  for (const Tensor& t : result.param_grads) require_finite(t, "backward");
  require_finite(g, "backward");
  result.input_grad = std::move(g);
  return result;
}

void SubModel::apply_gradients(std::span<const Tensor> grads, double lr) {
  sgd_step(params_, grads, lr);
  touch();
}

SplitModel SplitModel::create(std::vector<LayerSpec> bottom_layers, std::vector<LayerSpec> top_layers,
                              std::uint64_t seed) {
  validate_stack(bottom_layers);
  validate_stack(top_layers);
  if (bottom_layers.back().out_dim != top_layers.front().in_dim) {
    throw ShapeError("split layer mismatch: bottom emits " + std::to_string(bottom_layers.back().out_dim) +
                     ", top expects " + std::to_string(top_layers.front().in_dim));
  }
  Rng rng = make_rng({seed, 0x4d4f44454cULL});
  SplitModel m;
  m.bottom = SubModel(std::move(bottom_layers), rng);
  m.top = SubModel(std::move(top_layers), rng);
  return m;
}

SplitModel SplitModel::mlp(std::size_t input_dim, std::size_t hidden, std::size_t classes, std::uint64_t seed) {
  return create({LayerSpec::dense(input_dim, hidden), LayerSpec::relu(hidden)},
                {LayerSpec::dense(hidden, classes)}, seed);
}

SoftmaxCrossEntropy softmax_cross_entropy(const Tensor& logits, std::span<const Label> labels) {
  const std::size_t n = logits.rows(), m = logits.cols();
  if (n == 0) throw ValidationError("softmax_cross_entropy: empty batch");
  check_labels(labels, n, m);
  SoftmaxCrossEntropy out;
  out.probabilities = Tensor::matrix(n, m);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto z = logits.row(i);
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < m; ++j) sum += std::exp(z[j] - zmax);
    const double log_sum = zmax + std::log(sum);
    for (std::size_t j = 0; j < m; ++j) out.probabilities(i, j) = std::exp(z[j] - log_sum);
    total += log_sum - z[static_cast<std::size_t>(labels[i])];
  }
  out.loss = total / static_cast<double>(n);
  if (!std::isfinite(out.loss)) throw NumericError("non-finite cross-entropy");
  return out;
}

BottomForward forward_bottom(const SubModel& bottom, const Tensor& batch) {
  if (batch.rank() != 2 || batch.rows() == 0) throw ShapeError("forward_bottom: batch must be [n x in], n >= 1");
  ForwardResult f = bottom.forward(batch);
  return {std::move(f.output), std::move(f.cache)};
}

TopForward forward_top(const SubModel& top, const Tensor& features, std::span<const Label> labels) {
  if (features.rank() != 2 || features.cols() != top.in_dim()) {
    throw ShapeError("forward_top: features " + shape_string(features.shape()) + " for split width " +
                     std::to_string(top.in_dim()));
  }
  check_labels(labels, features.rows(), top.out_dim());
  ForwardResult f = top.forward(features);
  SoftmaxCrossEntropy ce = softmax_cross_entropy(f.output, labels);
  TopForward out;
  out.loss = ce.loss;
  out.cache.layers = std::move(f.cache);
  out.cache.probabilities = std::move(ce.probabilities);
  out.cache.labels.assign(labels.begin(), labels.end());
  return out;
}

TopBackward backward_top(const SubModel& top, const TopCache& cache) {
  const Tensor& probs = cache.probabilities;
  if (probs.empty() || cache.labels.size() != probs.rows()) {
    throw ContractError("backward_top: cache was not produced by forward_top");
  }
  const std::size_t n = probs.rows();
  Tensor dlogits = probs;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    dlogits(i, static_cast<std::size_t>(cache.labels[i])) -= 1.0;
    for (double& v : dlogits.row(i)) v *= inv_n;
  }
  BackwardResult b = top.backward(cache.layers, dlogits);
  return {std::move(b.param_grads), std::move(b.input_grad)};
}

std::vector<Tensor> backward_bottom(const SubModel& bottom, const ActivationCache& cache,
                                    const Tensor& feature_grads) {
  return bottom.backward(cache, feature_grads).param_grads;
}

void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads, double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ValidationError("sgd_step: learning rate must be >= 0");
  if (params.size() != grads.size()) throw ShapeError("sgd_step: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].same_shape(grads[i])) {
      throw ShapeError("sgd_step: parameter " + shape_string(params[i].shape()) + " vs gradient " +
                       shape_string(grads[i].shape()));
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].data();
    auto g = grads[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) p[k] -= lr * g[k];
    require_finite(params[i], "sgd_step");
  }
}

Labels predict(const SplitModel& model, const Tensor& samples) {
  Tensor logits = model.top.forward(model.bottom.forward(samples).output).output;
  Labels out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto r = logits.row(i);
    out[i] = static_cast<Label>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

double accuracy(const SplitModel& model, const Tensor& samples, std::span<const Label> labels) {
  Labels pred = predict(model, samples);
  if (pred.size() != labels.size()) throw ShapeError("accuracy: label count mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

}  // namespace mergesfl
