// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "smartfreeze/error.hpp"
#include "smartfreeze/nn.hpp"

using namespace smartfreeze;

namespace {

Batch random_batch(const Shape& sample, std::size_t n, std::size_t classes, Rng& rng) {
  Shape shape{n};
  shape.insert(shape.end(), sample.begin(), sample.end());
  Batch b{Tensor(shape), {}};
  for (double& v : b.inputs.values()) v = 2.0 * uniform01(rng) - 1.0;
  for (std::size_t i = 0; i < n; ++i) b.labels.push_back(uniform_index(rng, classes));
  return b;
}

void mark_all_trainable(Network& net) {
  for (auto& l : net.layers) l.spec.trainable = l.spec.has_parameters();
}

}  // namespace

TEST_SUITE("nn") {

TEST_CASE("tensor rejects data that does not match its shape") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), ContractError);
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.reshaped({3, 2}).dim(0) == 3);
  CHECK_THROWS_AS(t.reshaped({4}), ContractError);
}

TEST_CASE("dense layer with identity weights passes input through") {
  Rng rng(1);
  Network net = make_network({3}, {LayerSpec::dense(3, 3)}, rng);
  std::fill(net.layers[0].weight.values().begin(), net.layers[0].weight.values().end(), 0.0);
  for (std::size_t i = 0; i < 3; ++i) net.layers[0].weight[i * 3 + i] = 1.0;
  Tensor x({2, 3}, std::vector<double>{1, -2, 3, 0.5, 0, -1});
  CHECK(forward(net, x).back() == x);
}

TEST_CASE("relu clamps negatives") {
  Rng rng(1);
  Network net = make_network({3}, {LayerSpec::relu()}, rng);
  const Tensor y = forward(net, Tensor({1, 3}, std::vector<double>{-1, 0, 2})).back();
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 0.0);
  CHECK(y[2] == 2.0);
}

TEST_CASE("1x1 convolution with unit weight is the identity") {
  Rng rng(2);
  Network net = make_network({1, 4, 5}, {LayerSpec::conv2d(1, 1, 1)}, rng);
  net.layers[0].weight[0] = 1.0;
  Batch b = random_batch({1, 4, 5}, 3, 2, rng);
  CHECK(forward(net, b.inputs).back() == b.inputs);
}

TEST_CASE("shape mismatch names the offending layer") {
  Rng rng(1);
  Network net = make_network({4}, {LayerSpec::dense(4, 3)}, rng);
  net.layers.push_back(make_layer(LayerSpec::dense(5, 2), rng));
  try {
    net.output_shapes();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
  }
}

TEST_CASE("cross-entropy matches analytic and reference values") {
  CHECK(loss_ce(Tensor({1, 2}, 0.0), std::vector<std::size_t>{1}) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  // Margin m on the correct class: loss = log(1 + e^-m).
  const double m = 3.0;
  CHECK(loss_ce(Tensor({1, 2}, std::vector<double>{m, 0.0}), std::vector<std::size_t>{0}) ==
        doctest::Approx(std::log1p(std::exp(-m))).epsilon(1e-14));
  CHECK(loss_ce(Tensor({1, 2}, std::vector<double>{800.0, 0.0}), std::vector<std::size_t>{0}) == 0.0);

  Rng rng(5);
  Tensor logits({3, 4});
  for (double& v : logits.values()) v = 4.0 * uniform01(rng) - 2.0;
  const std::vector<std::size_t> labels{0, 3, 1};
  CHECK(loss_ce(logits, labels) == doctest::Approx(oracle::mean_ce(logits, labels)).epsilon(1e-13));
  CHECK_THROWS_AS(loss_ce(logits, std::vector<std::size_t>{0, 4, 1}), InputError);
}

TEST_CASE("masking all but the classifier yields only its gradients") {
  Rng rng(3);
  Network net = make_network({4}, {LayerSpec::dense(4, 5), LayerSpec::relu(), LayerSpec::dense(5, 3)}, rng);
  net.layers[2].spec.trainable = true;
  Batch b = random_batch({4}, 6, 3, rng);
  BackwardStats stats;
  const auto acts = forward(net, b.inputs);
  const auto grads = backward(net, b.inputs, acts, b.labels, net.trainable_mask(), &stats);
  REQUIRE(grads.size() == 2);
  CHECK(grads.contains({2, ParamId::Role::weight}));
  CHECK(grads.contains({2, ParamId::Role::bias}));
  CHECK(stats.activation_gradients == 1);
}

TEST_CASE("marking a parameter-free layer trainable is a configuration error") {
  Rng rng(3);
  Network net = make_network({4}, {LayerSpec::dense(4, 5), LayerSpec::relu(), LayerSpec::dense(5, 3)}, rng);
  Batch b = random_batch({4}, 2, 3, rng);
  std::vector<bool> mask{false, true, true};
  CHECK_THROWS_AS(backward(net, b.inputs, forward(net, b.inputs), b.labels, mask), ConfigError);
}

TEST_CASE("backward agrees with central finite differences on a 2-layer net") {
  Rng rng(11);
  Network net = make_network({5}, {LayerSpec::dense(5, 6), LayerSpec::relu(), LayerSpec::dense(6, 3)}, rng);
  mark_all_trainable(net);
  Batch b = random_batch({5}, 8, 3, rng);
  const auto grads = backward(net, b.inputs, forward(net, b.inputs), b.labels, net.trainable_mask());
  const auto fd = oracle::finite_difference(net, b);
  std::size_t k = 0;
  double worst = 0.0;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    for (auto role : {ParamId::Role::weight, ParamId::Role::bias}) {
      const Tensor& p = role == ParamId::Role::weight ? net.layers[l].weight : net.layers[l].bias;
      for (std::size_t i = 0; i < p.size(); ++i, ++k) {
        worst = std::max(worst, oracle::relative_error(grads.at({l, role})[i], fd[k]));
      }
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("convolution, pooling and flatten gradients agree with finite differences") {
  Rng rng(12);
  Network net = make_network({2, 6, 6},
                             {LayerSpec::conv2d(2, 3, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool2x2(),
                              LayerSpec::conv2d(3, 4, 3, 2, 1), LayerSpec::relu(), LayerSpec::flatten(),
                              LayerSpec::dense(16, 3)},
                             rng);
  mark_all_trainable(net);
  Batch b = random_batch({2, 6, 6}, 4, 3, rng);
  const auto grads = backward(net, b.inputs, forward(net, b.inputs), b.labels, net.trainable_mask());
  const auto fd = oracle::finite_difference(net, b);
  std::vector<double> analytic;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    if (!net.layers[l].spec.has_parameters()) continue;
    for (auto role : {ParamId::Role::weight, ParamId::Role::bias}) {
      for (double g : grads.at({l, role}).values()) analytic.push_back(g);
    }
  }
  REQUIRE(analytic.size() == fd.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < fd.size(); ++i) worst = std::max(worst, oracle::relative_error(analytic[i], fd[i]));
  CHECK(worst < 1e-4);
}

TEST_CASE("zero inputs give an exactly zero first-layer weight gradient") {
  Rng rng(4);
  Network net = make_network({3}, {LayerSpec::dense(3, 2)}, rng);
  mark_all_trainable(net);
  Tensor x({4, 3}, 0.0);
  const std::vector<std::size_t> labels{0, 1, 1, 0};
  const auto grads = backward(net, x, forward(net, x), labels, net.trainable_mask());
  for (double g : grads.at({0, ParamId::Role::weight}).values()) CHECK(g == 0.0);
}

TEST_CASE("sgd step follows the momentum recurrence") {
  Rng rng(1);
  Network net = make_network({1}, {LayerSpec::dense(1, 1)}, rng);
  net.layers[0].spec.trainable = true;
  net.layers[0].weight[0] = 1.0;
  net.layers[0].bias[0] = 0.0;
  Gradients g;
  g[{0, ParamId::Role::weight}] = Tensor({1, 1}, 0.5);
  g[{0, ParamId::Role::bias}] = Tensor({1}, 0.0);

  SUBCASE("plain step") {
    auto opt = make_optimizer(net, {1.0, 0.0, 0.0});
    sgd_step(net, g, opt);
    CHECK(net.layers[0].weight[0] == 0.5);
  }
  SUBCASE("two momentum steps") {
    const double lr = 0.1, mu = 0.9, wd = 0.01;
    auto opt = make_optimizer(net, {lr, mu, wd});
    sgd_step(net, g, opt);
    sgd_step(net, g, opt);
    double w = 1.0, v = 0.0;
    for (int i = 0; i < 2; ++i) {
      v = mu * v + 0.5 + wd * w;
      w -= lr * v;
    }
    CHECK(net.layers[0].weight[0] == doctest::Approx(w).epsilon(1e-15));
  }
}

TEST_CASE("frozen tensors never change under repeated steps") {
  Rng rng(6);
  Network net = make_network({4}, {LayerSpec::dense(4, 4), LayerSpec::relu(), LayerSpec::dense(4, 2)}, rng);
  net.layers[2].spec.trainable = true;
  const Layer frozen = net.layers[0];
  auto opt = make_optimizer(net, {});
  CHECK(opt.velocity.size() == 2);
  Batch b = random_batch({4}, 5, 2, rng);
  for (int i = 0; i < 20; ++i) {
    const auto grads = backward(net, b.inputs, forward(net, b.inputs), b.labels, net.trainable_mask());
    sgd_step(net, grads, opt);
  }
  CHECK(net.layers[0] == frozen);
  Gradients bad;
  bad[{0, ParamId::Role::weight}] = Tensor({4, 4});
  CHECK_THROWS_AS(sgd_step(net, bad, opt), ContractError);
}

TEST_CASE("non-finite inputs are rejected") {
  Rng rng(7);
  Network net = make_network({2}, {LayerSpec::dense(2, 2)}, rng);
  Tensor x({1, 2}, std::vector<double>{NAN, 1.0});
  CHECK_THROWS_AS(forward(net, x), InputError);
}

}  // TEST_SUITE
