// SPDX-License-Identifier: Apache-2.0
#include "smartfreeze/cost_model.hpp"

#include <algorithm>

#include "smartfreeze/error.hpp"

namespace smartfreeze {

std::uint64_t activation_reals(const Network& net, LayerRange range) {
  const auto shapes = net.output_shapes();
  std::uint64_t total = 0;
  for (std::size_t i = range.first; i < range.last; ++i) total += shape_size(shapes.at(i));
  return total;
}

MemoryBreakdown stage_memory(const StageModel& stage, std::size_t batch_size) {
  const auto& net = stage.network;
  const std::uint64_t batch = batch_size;
  const std::uint64_t trained_act =
      activation_reals(net, stage.trainable_block()) +
      activation_reals(net, stage.output_range);

  std::uint64_t trainable_params = 0;
  for (const auto& l : net.layers) {
    if (l.spec.trainable) trainable_params += l.parameter_count();
  }

  std::uint64_t peak = activation_reals(net, stage.output_range);
  for (const auto& r : stage.block_ranges) peak = std::max(peak, activation_reals(net, r));

  MemoryBreakdown m;
  m.activation_bytes = 2 * trained_act * batch * kBytesPerReal;
  m.parameter_bytes = net.parameter_count() * kBytesPerReal;
  m.optimizer_bytes = trainable_params * kBytesPerReal;
  m.forward_peak_bytes = peak * batch * kBytesPerReal;
  return m;
}

MemoryBreakdown full_training_memory(const Network& model, std::size_t batch_size) {
  MemoryBreakdown m;
  m.activation_bytes = 2 * activation_reals(model, {0, model.layers.size()}) *
                       batch_size * kBytesPerReal;
  m.parameter_bytes = model.parameter_count() * kBytesPerReal;
  m.optimizer_bytes = m.parameter_bytes;
  return m;
}

std::uint64_t forward_flops(const LayerSpec& spec, const Shape& input) {
  switch (spec.kind) {
    case LayerKind::dense:
      return 2ULL * spec.in * spec.out;
    case LayerKind::conv2d: {
      const Shape out = layer_output_shape(spec, input);
      return 2ULL * spec.kernel * spec.kernel * spec.in * spec.out * out[1] * out[2];
    }
    default:
      return 0;
  }
}

std::uint64_t training_flops(const Network& net, const std::vector<bool>& trainable) {
  if (trainable.size() != net.layers.size()) {
    throw ContractError("training_flops: mask size mismatch");
  }
  std::uint64_t total = 0;
  Shape in = net.input_shape;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& spec = net.layers[i].spec;
    total += forward_flops(spec, in);
    if (trainable[i]) total += backward_flops(spec, in);
    in = layer_output_shape(spec, in);
  }
  return total;
}

std::uint64_t stage_flops(const StageModel& stage) {
  return training_flops(stage.network, stage.trainable_mask());
}

std::uint64_t full_training_flops(const Network& model) {
  std::vector<bool> all(model.layers.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = model.layers[i].spec.has_parameters();
  return training_flops(model, all);
}

double client_time(std::uint64_t flops_per_sample, std::size_t dataset_size,
                   double rho, double compute_rate, std::size_t local_epochs) {
  if (!(compute_rate > 0.0)) {
    throw ConfigError("compute rate must be positive, got " + std::to_string(compute_rate));
  }
  return static_cast<double>(local_epochs) * rho *
         static_cast<double>(flops_per_sample) *
         static_cast<double>(dataset_size) / compute_rate;
}

double round_time(std::span<const double> client_times) {
  if (client_times.empty()) throw ContractError("round_time of an empty cohort");
  return *std::max_element(client_times.begin(), client_times.end());
}

}  // namespace smartfreeze
