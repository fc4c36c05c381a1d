// SPDX-License-Identifier: Apache-2.0
#include "smartfreeze/progressive.hpp"

#include "smartfreeze/error.hpp"
#include "smartfreeze/rng.hpp"

namespace smartfreeze {

namespace {

Shape propagate(Shape shape, const std::vector<Layer>& layers) {
  for (const auto& l : layers) shape = layer_output_shape(l.spec, shape);
  return shape;
}

void set_trainable(std::vector<Layer>& layers, bool trainable) {
  for (auto& l : layers) l.spec.trainable = trainable && l.spec.has_parameters();
}

LayerRange append(Network& net, const std::vector<Layer>& layers) {
  LayerRange r{net.layers.size(), net.layers.size() + layers.size()};
  net.layers.insert(net.layers.end(), layers.begin(), layers.end());
  return r;
}

}  // namespace

Shape BlockPartition::block_input_shape(std::size_t index) const {
  if (index > blocks.size()) throw ContractError("block index out of range");
  Shape s = input_shape;
  for (std::size_t b = 0; b < index; ++b) s = propagate(s, blocks[b]);
  return s;
}

Shape BlockPartition::block_output_shape(std::size_t index) const {
  if (index >= blocks.size()) throw ContractError("block index out of range");
  return propagate(block_input_shape(index), blocks[index]);
}

Network BlockPartition::reassemble() const {
  Network net{input_shape, {}};
  for (const auto& b : blocks) append(net, b);
  append(net, head);
  return net;
}

std::size_t head_start(const std::vector<Layer>& layers) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].spec.kind == LayerKind::flatten) return i;
  }
  for (std::size_t i = layers.size(); i-- > 0;) {
    if (layers[i].spec.has_parameters()) return i;
  }
  throw ConfigError("model has no classifier layer");
}

BlockPartition partition_model(const Network& model,
                               const std::vector<std::size_t>& boundaries) {
  model.output_shapes();
  const std::size_t body_end = head_start(model.layers);
  if (boundaries.empty()) {
    throw ConfigError("partition needs at least 2 blocks (no boundaries given)");
  }
  std::size_t prev = 0;
  for (std::size_t i = 0; i < boundaries.size(); ++i) {
    const std::size_t b = boundaries[i];
    const std::string where = "boundary[" + std::to_string(i) + "]=" + std::to_string(b);
    if (b <= prev) throw ConfigError(where + " is not strictly increasing past " + std::to_string(prev));
    if (b >= body_end) {
      throw ConfigError(where + " is not inside the feature layers [1, " +
                        std::to_string(body_end) + ")");
    }
    if (!model.layers[b].spec.has_parameters()) {
      throw ConfigError(where + " splits an atomic unit (layer " + std::to_string(b) +
                        " is " + to_string(model.layers[b].spec.kind) + ")");
    }
    prev = b;
  }
  if (!model.layers[0].spec.has_parameters()) {
    throw ConfigError("first block must start with a parameterized layer");
  }

  BlockPartition p;
  p.input_shape = model.input_shape;
  p.boundaries = boundaries;
  std::vector<std::size_t> cuts{0};
  cuts.insert(cuts.end(), boundaries.begin(), boundaries.end());
  cuts.push_back(body_end);
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    p.blocks.emplace_back(model.layers.begin() + static_cast<std::ptrdiff_t>(cuts[i]),
                          model.layers.begin() + static_cast<std::ptrdiff_t>(cuts[i + 1]));
  }
  p.head.assign(model.layers.begin() + static_cast<std::ptrdiff_t>(body_end),
                model.layers.end());
  return p;
}

std::size_t OutputModule::stand_in_count() const noexcept {
  std::size_t n = 0;
  for (const auto& l : layers) {
    if (l.spec.has_parameters()) ++n;
  }
  return n == 0 ? 0 : n - 1;  // the last parameterized layer is the classifier
}

OutputModule build_output_module(const BlockPartition& partition,
                                 std::size_t stage, std::size_t num_classes,
                                 std::uint64_t seed) {
  const std::size_t T = partition.num_blocks();
  if (stage == 0 || stage > T) {
    throw ContractError("output module stage " + std::to_string(stage) +
                        " outside [1, " + std::to_string(T) + "]");
  }
  if (stage == T) {
    throw ContractError("stage T uses the original head, not a synthetic output module");
  }
  Rng rng(derive_seed(seed, {0x0b, stage}));
  OutputModule op{stage, {}};
  for (std::size_t j = stage; j < T; ++j) {
    const Shape in = partition.block_input_shape(j);
    const Shape out = partition.block_output_shape(j);
    LayerSpec spec;
    if (in.size() == 3 && out.size() == 3) {
      const std::size_t stride = std::max<std::size_t>(1, in[1] / out[1]);
      spec = LayerSpec::conv2d(in[0], out[0], 3, stride, 1);
      if (layer_output_shape(spec, in) != out) {
        throw ConfigError("block " + std::to_string(j + 1) +
                          " downsampling " + shape_to_string(in) + " -> " +
                          shape_to_string(out) +
                          " cannot be emulated by a stride-" +
                          std::to_string(stride) + " 3x3 conv");
      }
    } else if (in.size() == 1 && out.size() == 1) {
      spec = LayerSpec::dense(in[0], out[0]);
    } else {
      throw ConfigError("block " + std::to_string(j + 1) +
                        " changes rank; no stand-in layer available");
    }
    spec.trainable = true;
    op.layers.push_back(make_layer(spec, rng));
    op.layers.push_back(make_layer(LayerSpec::relu(), rng));
  }
  Shape last = partition.block_output_shape(T - 1);
  if (last.size() != 1) {
    op.layers.push_back(make_layer(LayerSpec::flatten(), rng));
  }
  auto classifier = LayerSpec::dense(shape_size(last), num_classes);
  classifier.trainable = true;
  op.layers.push_back(make_layer(classifier, rng));
  return op;
}

StageModel assemble_stage_model(const BlockPartition& partition,
                                std::size_t stage, const OutputModule* op) {
  const std::size_t T = partition.num_blocks();
  if (stage == 0 || stage > T) {
    throw ContractError("stage " + std::to_string(stage) + " outside [1, " +
                        std::to_string(T) + "]");
  }
  if (stage < T && (op == nullptr || op->stage != stage)) {
    throw ContractError("output module does not belong to stage " +
                        std::to_string(stage));
  }
  if (stage == T && op != nullptr) {
    throw ContractError("stage T must use the original head");
  }
  StageModel sm;
  sm.stage = stage;
  sm.num_blocks = T;
  sm.network.input_shape = partition.input_shape;
  for (std::size_t b = 0; b < stage; ++b) {
    auto layers = partition.blocks[b];
    set_trainable(layers, b + 1 == stage);
    sm.block_ranges.push_back(append(sm.network, layers));
  }
  auto top = stage == T ? partition.head : op->layers;
  set_trainable(top, true);
  sm.output_range = append(sm.network, top);
  sm.network.output_shapes();
  return sm;
}

StageModel grow(const StageModel& prev, const BlockPartition& partition,
                std::uint64_t seed) {
  const std::size_t T = partition.num_blocks();
  if (prev.num_blocks != T) throw ContractError("grow: partition mismatch");
  if (prev.is_final()) {
    throw ContractError("grow: stage T reached, training is complete");
  }
  const std::size_t next = prev.stage + 1;
  StageModel sm;
  sm.stage = next;
  sm.num_blocks = T;
  sm.network.input_shape = prev.network.input_shape;
  for (const auto& r : prev.block_ranges) {
    std::vector<Layer> layers(prev.network.layers.begin() + static_cast<std::ptrdiff_t>(r.first),
                              prev.network.layers.begin() + static_cast<std::ptrdiff_t>(r.last));
    set_trainable(layers, false);
    sm.block_ranges.push_back(append(sm.network, layers));
  }
  auto fresh = partition.blocks[next - 1];
  set_trainable(fresh, true);
  sm.block_ranges.push_back(append(sm.network, fresh));

  std::vector<Layer> top;
  if (next == T) {
    top = partition.head;
  } else {
    const std::size_t classes = partition.reassemble().num_classes();
    top = build_output_module(partition, next, classes, seed).layers;
  }
  set_trainable(top, true);
  sm.output_range = append(sm.network, top);
  sm.network.output_shapes();
  return sm;
}

}  // namespace smartfreeze
