// SPDX-License-Identifier: Apache-2.0
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "smartfreeze/config.hpp"
#include "smartfreeze/cost_model.hpp"
#include "smartfreeze/error.hpp"

using namespace smartfreeze;

namespace {

std::vector<StageModel> reference_stages() {
  const Network net = build_model(model_preset("reference_cnn", 10), 1);
  const auto p = partition_model(net, {5, 10, 15});
  std::vector<StageModel> out;
  const auto op = build_output_module(p, 1, 10, 2);
  out.push_back(assemble_stage_model(p, 1, &op));
  while (!out.back().is_final()) out.push_back(grow(out.back(), p, 2));
  return out;
}

}  // namespace

TEST_SUITE("cost_model") {

TEST_CASE("single dense layer matches a hand count") {
  Rng rng(1);
  StageModel s;
  s.stage = 1;
  s.num_blocks = 1;
  s.network = make_network({10}, {LayerSpec::dense(10, 2)}, rng);
  s.network.layers[0].spec.trainable = true;
  s.block_ranges = {{0, 1}};
  s.output_range = {1, 1};
  const auto m = stage_memory(s, 1);
  CHECK(m.parameter_bytes == 22 * 8);
  CHECK(m.optimizer_bytes == 22 * 8);
  CHECK(m.activation_bytes == 2 * 2 * 8);
  CHECK(m.forward_peak_bytes == 2 * 8);
}

TEST_CASE("batch size scales activation terms only") {
  for (const auto& s : reference_stages()) {
    const auto a = stage_memory(s, 16);
    const auto b = stage_memory(s, 32);
    CHECK(b.activation_bytes == 2 * a.activation_bytes);
    CHECK(b.forward_peak_bytes == 2 * a.forward_peak_bytes);
    CHECK(b.parameter_bytes == a.parameter_bytes);
    CHECK(b.optimizer_bytes == a.optimizer_bytes);
  }
}

TEST_CASE("stage memory equals the per-layer counting oracle and beats full training") {
  const auto stages = reference_stages();
  const std::uint64_t full = full_training_memory(stages.back().network, 32).total();
  CHECK(full == oracle::full_memory_bytes(stages.back().network, 32));
  for (const auto& s : stages) {
    CHECK(stage_memory(s, 32).total() == oracle::stage_memory_bytes(s, 32));
    CHECK(stage_memory(s, 32).total() < full);
  }
}

TEST_CASE("FLOPs match the layer-by-layer counter") {
  const auto stages = reference_stages();
  const Network& full = stages.back().network;
  CHECK(full_training_flops(full) == oracle::training_flops(full, true));
  for (const auto& s : stages) {
    CHECK(stage_flops(s) == oracle::training_flops(s.network, false));
    if (!s.is_final()) CHECK(stage_flops(s) < full_training_flops(full));
  }
  CHECK(forward_flops(LayerSpec::dense(7, 3), {7}) == 42);
  CHECK(forward_flops(LayerSpec::conv2d(2, 4, 3, 1, 1), {2, 5, 5}) == 2 * 9 * 2 * 4 * 25);
  CHECK(stage_flops(stages[1]) > stage_flops(stages[0]));
}

TEST_CASE("freezing a layer removes exactly its backward work") {
  auto s = reference_stages().back();
  const auto before = stage_flops(s);
  const std::size_t k = s.trainable_block().first;
  REQUIRE(s.network.layers[k].spec.trainable);
  s.network.layers[k].spec.trainable = false;
  const Shape in = k == 0 ? s.network.input_shape : s.network.output_shapes()[k - 1];
  CHECK(before - stage_flops(s) == backward_flops(s.network.layers[k].spec, in));
}

TEST_CASE("client and round time") {
  CHECK(client_time(100, 10, 1.0, 1000.0, 1) == 1.0);
  CHECK(client_time(100, 10, 1.0, 2000.0, 1) == 0.5);
  CHECK_THROWS_AS(client_time(100, 10, 1.0, 0.0, 1), ConfigError);
  const std::vector<double> t{1.0, 2.5, 0.3};
  CHECK(round_time(t) == 2.5);
  CHECK(round_time(std::vector<double>{0.7}) == 0.7);
  CHECK_THROWS_AS(round_time(std::vector<double>{}), ContractError);
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    std::vector<double> xs(1 + uniform_index(rng, 10));
    for (double& x : xs) x = uniform01(rng);
    double m = xs[0];
    for (double x : xs) m = x > m ? x : m;
    CHECK(round_time(xs) == m);
  }
}

}  // TEST_SUITE
