// SPDX-License-Identifier: Apache-2.0
//
// Block-wise progressive training structures. The global model is cut into
// T ordered blocks plus the original classifier head. Stage t trains block t
// behind a frozen prefix, topped by an output module that stands in for the
// blocks not yet grown.
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "smartfreeze/nn.hpp"

namespace smartfreeze {

struct LayerRange {
  std::size_t first = 0;
  std::size_t last = 0;  // exclusive

  std::size_t size() const noexcept { return last - first; }
  bool contains(std::size_t i) const noexcept { return i >= first && i < last; }
  friend bool operator==(const LayerRange&, const LayerRange&) = default;
};

struct BlockPartition {
  Shape input_shape;
  std::vector<std::vector<Layer>> blocks;
  std::vector<Layer> head;
  std::vector<std::size_t> boundaries;

  std::size_t num_blocks() const noexcept { return blocks.size(); }
  // Per-sample input shape of block `index` (0-based), or of the head when
  // index == num_blocks().
  Shape block_input_shape(std::size_t index) const;
  Shape block_output_shape(std::size_t index) const;
  Network reassemble() const;
};

// First layer of the classifier head: the first flatten, or the last
// parameterized layer when the model has no flatten.
std::size_t head_start(const std::vector<Layer>& layers);

// Boundaries are layer indices where blocks 2..T begin. Each must be strictly
// increasing, inside the feature extractor, and land on a parameterized layer
// so a layer is never separated from its trailing activation/pooling.
BlockPartition partition_model(const Network& model,
                               const std::vector<std::size_t>& boundaries);

struct OutputModule {
  std::size_t stage = 0;  // 1-based stage this module was built for
  std::vector<Layer> layers;

  std::size_t stand_in_count() const noexcept;
};

// One stand-in layer (kernel 3, padding 1, stride matching the replaced
// block's net downsampling) with relu per block t+1..T, then a classifier.
OutputModule build_output_module(const BlockPartition& partition,
                                 std::size_t stage, std::size_t num_classes,
                                 std::uint64_t seed);

struct StageModel {
  std::size_t stage = 0;  // 1-based
  std::size_t num_blocks = 0;
  Network network;
  std::vector<LayerRange> block_ranges;  // blocks 1..stage
  LayerRange output_range;  // output module, or the original head at stage T

  bool is_final() const noexcept { return stage == num_blocks; }
  const LayerRange& trainable_block() const { return block_ranges.back(); }
  std::vector<bool> trainable_mask() const { return network.trainable_mask(); }
  // Layers [0, first trainable) are frozen.
  std::size_t frozen_prefix_end() const { return trainable_block().first; }
};

// Takes block parameters from the partition. `op` must be built for `stage`
// unless stage == T, where it must be null and the original head is used.
StageModel assemble_stage_model(const BlockPartition& partition,
                                std::size_t stage, const OutputModule* op);

// Freezes every block of `prev`, appends block stage+1 with the partition's
// initial parameters and a fresh output module.
StageModel grow(const StageModel& prev, const BlockPartition& partition,
                std::uint64_t seed);

}  // namespace smartfreeze
