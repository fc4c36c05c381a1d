// SPDX-License-Identifier: Apache-2.0
//
// Analytic memory, FLOPs and wall-clock models for stage-wise training.
// Every layer output counts as an activation; reals are 8 bytes.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "smartfreeze/nn.hpp"
#include "smartfreeze/progressive.hpp"

namespace smartfreeze {

inline constexpr std::uint64_t kBytesPerReal = 8;

struct MemoryBreakdown {
  std::uint64_t activation_bytes = 0;    // stored activations, doubled for their gradients
  std::uint64_t parameter_bytes = 0;     // all parameters of the trained model
  std::uint64_t optimizer_bytes = 0;     // one momentum buffer per trainable real
  std::uint64_t forward_peak_bytes = 0;  // largest single-block activation in the forward pass

  std::uint64_t total() const noexcept {
    return activation_bytes + parameter_bytes + optimizer_bytes +
           forward_peak_bytes;
  }
  friend bool operator==(const MemoryBreakdown&, const MemoryBreakdown&) = default;
};

// Per-sample activation reals produced by layers [first, last).
std::uint64_t activation_reals(const Network& net, LayerRange range);

MemoryBreakdown stage_memory(const StageModel& stage, std::size_t batch_size);

// Training every layer at once: all activations x 2 + all parameters + a
// full optimizer state.
MemoryBreakdown full_training_memory(const Network& model,
                                     std::size_t batch_size);

// dense: 2*in*out. conv2d: 2*k^2*C_in*C_out*H_out*W_out. Others: 0.
std::uint64_t forward_flops(const LayerSpec& spec, const Shape& input);
inline std::uint64_t backward_flops(const LayerSpec& spec, const Shape& input) {
  return 2 * forward_flops(spec, input);
}

// Per-sample forward FLOPs of every layer plus backward FLOPs of the layers
// flagged in `trainable`.
std::uint64_t training_flops(const Network& net, const std::vector<bool>& trainable);

std::uint64_t stage_flops(const StageModel& stage);
std::uint64_t full_training_flops(const Network& model);

// epochs * rho * flops * dataset_size / compute_rate, in seconds.
double client_time(std::uint64_t flops_per_sample, std::size_t dataset_size,
                   double rho, double compute_rate, std::size_t local_epochs);

// Synchronous round: the slowest selected client.
double round_time(std::span<const double> client_times);

}  // namespace smartfreeze
