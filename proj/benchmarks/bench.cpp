// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "smartfreeze/cohort.hpp"
#include "smartfreeze/config.hpp"
#include "smartfreeze/cost_model.hpp"
#include "smartfreeze/progressive.hpp"

using namespace smartfreeze;

namespace {

Network reference_model() {
  Network net = build_model(model_preset("reference_cnn", 10), 1);
  for (auto& l : net.layers) l.spec.trainable = l.spec.has_parameters();
  return net;
}

Batch image_batch(std::size_t n) {
  Rng rng(2);
  Batch b{Tensor({n, 1, 8, 8}), {}};
  for (double& v : b.inputs.values()) v = uniform01(rng) - 0.5;
  for (std::size_t i = 0; i < n; ++i) b.labels.push_back(i % 10);
  return b;
}

void BM_Forward(benchmark::State& state) {
  const Network net = reference_model();
  const Batch b = image_batch(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(forward(net, b.inputs));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(1)->Arg(32);

void BM_ForwardBackward(benchmark::State& state) {
  const Network net = reference_model();
  const Batch b = image_batch(static_cast<std::size_t>(state.range(0)));
  const auto mask = net.trainable_mask();
  for (auto _ : state) {
    const auto acts = forward(net, b.inputs);
    benchmark::DoNotOptimize(backward(net, b.inputs, acts, b.labels, mask));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardBackward)->Arg(1)->Arg(32);

void BM_Louvain(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  std::vector<GradientVector> grads(n, GradientVector(32));
  for (std::size_t i = 0; i < n; ++i) {
    for (double& x : grads[i]) x = uniform01(rng) - 0.5 + static_cast<double>(i % 4) * 0.3;
  }
  const WeightedGraph g = build_graph(SimilarityMatrix::from_gradients(grads));
  for (auto _ : state) benchmark::DoNotOptimize(louvain(g, 1));
}
BENCHMARK(BM_Louvain)->Arg(40)->Arg(200);

void BM_Rlcd(benchmark::State& state) {
  Rng rng(4);
  std::vector<GradientVector> grads(40, GradientVector(32));
  for (auto& g : grads) {
    for (double& x : g) x = uniform01(rng) - 0.3;
  }
  const WeightedGraph g = build_graph(SimilarityMatrix::from_gradients(grads));
  for (auto _ : state) benchmark::DoNotOptimize(rlcd(g, 1.0, 1));
}
BENCHMARK(BM_Rlcd);

void BM_StageMemory(benchmark::State& state) {
  const Network net = reference_model();
  const auto partition = partition_model(net, model_preset("reference_cnn", 10).boundaries);
  const OutputModule op = build_output_module(partition, 1, 10, 1);
  const StageModel stage = assemble_stage_model(partition, 1, &op);
  for (auto _ : state) benchmark::DoNotOptimize(stage_memory(stage, 32));
}
BENCHMARK(BM_StageMemory);

}  // namespace

BENCHMARK_MAIN();
