// SPDX-License-Identifier: Apache-2.0
//
// Minimal differentiable network substrate: a fixed layer vocabulary with
// hand-written forward/backward passes, softmax cross-entropy, and SGD with
// momentum. Layers flagged non-trainable get no gradients and the backward
// pass stops at the first trainable layer.
#pragma once

#include <compare>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "smartfreeze/rng.hpp"
#include "smartfreeze/tensor.hpp"

namespace smartfreeze {

enum class LayerKind { dense, conv2d, relu, maxpool2x2, flatten };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  // dense: in/out features. conv2d: in/out channels.
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t pad = 0;
  bool trainable = false;

  static LayerSpec dense(std::size_t in, std::size_t out);
  static LayerSpec conv2d(std::size_t in_channels, std::size_t out_channels,
                          std::size_t kernel, std::size_t stride = 1,
                          std::size_t pad = 0);
  static LayerSpec relu();
  static LayerSpec maxpool2x2();
  static LayerSpec flatten();

  bool has_parameters() const noexcept {
    return kind == LayerKind::dense || kind == LayerKind::conv2d;
  }
  // Equal up to the trainable flag.
  bool same_architecture(const LayerSpec& other) const noexcept;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

// Per-sample output shape; throws ConfigError if `input` does not fit.
Shape layer_output_shape(const LayerSpec& spec, const Shape& input);

struct Layer {
  LayerSpec spec;
  Tensor weight;  // dense: out x in, conv2d: out x in x k x k
  Tensor bias;    // out

  std::size_t parameter_count() const noexcept {
    return weight.size() + bias.size();
  }
  friend bool operator==(const Layer&, const Layer&) = default;
};

// He-uniform weights (bound sqrt(6 / fan_in)) and zero biases.
Layer make_layer(const LayerSpec& spec, Rng& rng);

struct Network {
  Shape input_shape;  // per sample: {C, H, W} or {features}
  std::vector<Layer> layers;

  // Per-sample output shape of every layer. Throws ConfigError naming the
  // first layer whose input shape does not compose.
  std::vector<Shape> output_shapes() const;
  std::size_t parameter_count() const noexcept;
  std::vector<bool> trainable_mask() const;
  std::size_t num_classes() const;

  friend bool operator==(const Network&, const Network&) = default;
};

Network make_network(Shape input_shape, const std::vector<LayerSpec>& specs,
                     Rng& rng);

// Concatenated weight/bias values of layers [first, last).
std::vector<double> flatten_parameters(const Network& net, std::size_t first,
                                       std::size_t last);
void assign_parameters(Network& net, std::size_t first, std::size_t last,
                       std::span<const double> values);

struct Batch {
  Tensor inputs;  // N x per-sample shape
  std::vector<std::size_t> labels;

  std::size_t size() const noexcept { return labels.size(); }
};

struct ParamId {
  enum class Role { weight, bias };
  std::size_t layer = 0;
  Role role = Role::weight;

  friend auto operator<=>(const ParamId&, const ParamId&) = default;
};

using Gradients = std::map<ParamId, Tensor>;
using Activations = std::vector<Tensor>;

// One output per layer; the last one holds the logits.
Activations forward(const Network& net, const Tensor& inputs);

// Mean softmax cross-entropy over the batch.
double loss_ce(const Tensor& logits, std::span<const std::size_t> labels);
// Per-sample cross-entropy values.
std::vector<double> sample_losses(const Tensor& logits,
                                  std::span<const std::size_t> labels);

struct BackwardStats {
  // Activation-gradient tensors materialised during the pass.
  std::size_t activation_gradients = 0;
};

// Gradients of loss_ce for every layer with mask[layer] == true. Layers
// before the first trainable one are never visited.
Gradients backward(const Network& net, const Tensor& inputs,
                   const Activations& activations,
                   std::span<const std::size_t> labels,
                   const std::vector<bool>& mask,
                   BackwardStats* stats = nullptr);

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;

  friend bool operator==(const SgdConfig&, const SgdConfig&) = default;
};

struct OptimizerState {
  SgdConfig config;
  std::map<ParamId, Tensor> velocity;  // one buffer per trainable tensor
};

OptimizerState make_optimizer(const Network& net, const SgdConfig& config);

// v <- momentum * v + g + weight_decay * w;  w <- w - lr * v.
void sgd_step(Network& net, const Gradients& grads, OptimizerState& opt);

std::size_t argmax_row(const Tensor& logits, std::size_t row);

}  // namespace smartfreeze
