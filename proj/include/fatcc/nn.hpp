#pragma once

// Dense feedforward classifier with hand-derived reverse-mode gradients.
//
// Layout: every hidden layer is affine + ReLU, the output layer is affine.
// The "feature" of a sample is the input to the output layer (the penultimate
// activation); the contrast objective attaches its gradient there.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fatcc/tensor.hpp"

namespace fatcc {

struct Layer {
  Tensor weight;  // [out, in]
  std::vector<double> bias;  // [out]

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }

  friend bool operator==(const Layer&, const Layer&) = default;
};

struct ModelParams {
  std::vector<Layer> layers;

  std::size_t input_dim() const { return layers.front().in_dim(); }
  std::size_t num_classes() const { return layers.back().out_dim(); }
  std::size_t feature_dim() const { return layers.back().in_dim(); }
  std::size_t parameter_count() const;

  /// Throws ShapeError unless consecutive layers chain and biases match.
  void validate() const;

  /// Same shape, all zeros.
  ModelParams zeros_like() const;

  /// Flat views over every weight then bias, layer by layer.
  std::vector<double> flatten() const;
  void assign_flat(std::span<const double> flat);

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

struct TrainConfig {
  double learning_rate = 0.01;
  std::size_t batch_size = 128;
  std::size_t local_epochs = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Glorot-uniform weights in [-s, s], s = sqrt(6 / (fan_in + fan_out)); zero biases.
/// `widths` lists every layer width including input and class count, e.g. {784, 256, 80, 10}.
ModelParams init_mlp(std::span<const std::size_t> widths, std::uint64_t seed);

struct ForwardTrace {
  std::vector<Tensor> pre;  // pre-activations, one per layer
  std::vector<Tensor> act;  // act[0] = input, act[k + 1] = relu(pre[k]) for hidden k

  const Tensor& logits() const { return pre.back(); }
  const Tensor& features() const { return act[pre.size() - 1]; }
  const Tensor& input() const { return act.front(); }

  friend bool operator==(const ForwardTrace&, const ForwardTrace&) = default;
};

ForwardTrace forward(const ModelParams& params, const Tensor& input);

/// Mean over rows of -log softmax(logits)[label], computed with a max shift.
double cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Argmax per row; ties resolve to the lowest class index.
std::vector<int> predict(const ModelParams& params, const Tensor& input);

/// Upstream gradient of a scalar loss w.r.t. the network outputs. `d_features`
/// may be empty when the loss does not read the features.
struct OutputGrad {
  Tensor d_logits;
  Tensor d_features;
};

struct Gradients {
  ModelParams params;
  Tensor input;
};

/// Reverse pass through `trace`. ReLU'(0) is taken as 0.
Gradients backward(const ModelParams& params, const ForwardTrace& trace, const OutputGrad& grad);

/// params - lr * grads.
ModelParams sgd_step(const ModelParams& params, const ModelParams& grads, double learning_rate);

}  // namespace fatcc
