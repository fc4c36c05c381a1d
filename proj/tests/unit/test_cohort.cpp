// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "smartfreeze/cohort.hpp"
#include "smartfreeze/error.hpp"

using namespace smartfreeze;

namespace {

std::vector<std::vector<double>> dense_weights(const WeightedGraph& g) {
  std::vector<std::vector<double>> w(g.size(), std::vector<double>(g.size()));
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (std::size_t j = 0; j < g.size(); ++j) w[i][j] = g.weight(i, j);
  }
  return w;
}

WeightedGraph four_node(std::initializer_list<double> weights) {
  WeightedGraph g(4);
  const std::pair<int, int> edges[] = {{0, 1}, {2, 3}, {0, 2}, {1, 3}, {0, 3}, {1, 2}};
  std::size_t k = 0;
  for (double w : weights) {
    g.set_weight(edges[k].first, edges[k].second, w);
    ++k;
  }
  return g;
}

bool is_partition(const CommunitySet& cs, std::size_t n) {
  std::vector<int> seen(n, 0);
  for (const auto& c : cs.communities) {
    for (auto v : c) {
      if (v >= n) return false;
      ++seen[v];
    }
  }
  return std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; });
}

bool refines(const std::vector<Community>& fine, const std::vector<Community>& coarse) {
  for (const auto& f : fine) {
    const bool inside = std::any_of(coarse.begin(), coarse.end(), [&](const Community& c) {
      return std::all_of(f.begin(), f.end(), [&](std::size_t v) {
        return std::find(c.begin(), c.end(), v) != c.end();
      });
    });
    if (!inside) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("cohort") {

TEST_CASE("probe gradients are deterministic and sized to the output layer") {
  Rng rng(3);
  const Network net = make_network({4}, {LayerSpec::dense(4, 6), LayerSpec::relu(), LayerSpec::dense(6, 3)}, rng);
  Batch shard{Tensor({10, 4}), {}};
  for (double& v : shard.inputs.values()) v = uniform01(rng);
  for (int i = 0; i < 10; ++i) shard.labels.push_back(i % 3);
  const auto g = probe_gradients(net, {shard, shard, Batch{}}, 4, {}, 9);
  REQUIRE(g[0].has_value());
  CHECK(g[0]->size() == 6 * 3 + 3);
  CHECK(*g[0] == *g[1]);
  CHECK_FALSE(g[2].has_value());
}

TEST_CASE("single-batch probe equals the direct output-layer gradient") {
  Rng rng(4);
  Network net = make_network({4}, {LayerSpec::dense(4, 5), LayerSpec::relu(), LayerSpec::dense(5, 2)}, rng);
  Batch shard{Tensor({6, 4}), {0, 1, 1, 0, 1, 0}};
  for (double& v : shard.inputs.values()) v = uniform01(rng) - 0.5;
  const auto g = probe_gradients(net, {shard}, 32, {}, 1);
  net.layers[2].spec.trainable = true;
  const auto direct = backward(net, shard.inputs, forward(net, shard.inputs), shard.labels, net.trainable_mask());
  std::vector<double> expect(direct.at({2, ParamId::Role::weight}).values().begin(),
                             direct.at({2, ParamId::Role::weight}).values().end());
  for (double b : direct.at({2, ParamId::Role::bias}).values()) expect.push_back(b);
  REQUIRE(g[0]->size() == expect.size());
  for (std::size_t i = 0; i < expect.size(); ++i) CHECK((*g[0])[i] == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("cosine similarity") {
  const std::vector<double> a{1.0, 2.0, 3.0}, b{-2.0, 1.0, 0.0};
  CHECK(similarity(a, a) == doctest::Approx(1.0));
  CHECK(similarity(a, b) == 0.0);
  CHECK_THROWS_AS(similarity(a, std::vector<double>{0, 0, 0}), UndefinedMetricError);
  Rng rng(1);
  std::vector<double> x(7), y(7);
  for (double& v : x) v = uniform01(rng) - 0.5;
  for (double& v : y) v = uniform01(rng) - 0.5;
  double dot = 0.0;
  for (std::size_t i = 0; i < 7; ++i) dot += x[i] * y[i];
  CHECK(similarity(x, y) == doctest::Approx(dot / (oracle::norm(x) * oracle::norm(y))).epsilon(1e-14));
}

TEST_CASE("graph keeps only positive similarities") {
  SimilarityMatrix omega(3);
  omega.set(0, 1, -0.5);
  omega.set(0, 2, 0.8);
  omega.set(1, 2, 0.3);
  const WeightedGraph g = build_graph(omega);
  CHECK(g.weight(0, 1) == 0.0);
  CHECK(g.weight(0, 2) == 0.8);
  CHECK(g.degree(0) == doctest::Approx(0.8));
  CHECK(g.degree(2) == doctest::Approx(1.1));
}

TEST_CASE("louvain separates disconnected cliques") {
  WeightedGraph g(8);
  for (std::size_t base : {0u, 4u}) {
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = i + 1; j < 4; ++j) g.set_weight(base + i, base + j, 1.0);
    }
  }
  const auto cs = louvain(g, 5);
  REQUIRE(cs.communities.size() == 2);
  CHECK(cs.communities[0] == Community{0, 1, 2, 3});
  CHECK(cs.communities[1] == Community{4, 5, 6, 7});

  WeightedGraph k4(4);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = i + 1; j < 4; ++j) k4.set_weight(i, j, 1.0);
  }
  CHECK(modularity(k4, louvain(k4, 1).labels()) >= 0.0);
}

TEST_CASE("louvain is close to the planted partition on random graphs") {
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    WeightedGraph g(12);
    std::vector<std::size_t> planted(12);
    for (std::size_t i = 0; i < 12; ++i) planted[i] = i / 4;
    for (std::size_t i = 0; i < 12; ++i) {
      for (std::size_t j = i + 1; j < 12; ++j) {
        const bool same = planted[i] == planted[j];
        if (uniform01(rng) < (same ? 0.8 : 0.15)) g.set_weight(i, j, 0.2 + uniform01(rng));
      }
    }
    const auto cs = louvain(g, trial);
    CHECK(is_partition(cs, 12));
    const double found = oracle::modularity(dense_weights(g), cs.labels());
    CHECK(found == doctest::Approx(modularity(g, cs.labels())).epsilon(1e-12));
    CHECK(found >= oracle::modularity(dense_weights(g), planted) - 0.05);
    std::vector<std::size_t> singletons(12);
    for (std::size_t i = 0; i < 12; ++i) singletons[i] = i;
    CHECK(found >= oracle::modularity(dense_weights(g), singletons));
  }
}

TEST_CASE("hierarchy check") {
  CHECK(hierarchy_check(four_node({0.9, 0.9, 0.1, 0.1}), 1.0));
  CHECK_FALSE(hierarchy_check(four_node({0.5, 0.5, 0.5, 0.5, 0.5, 0.5}), 1.0));
  WeightedGraph three(3);
  three.set_weight(0, 1, 0.9);
  three.set_weight(1, 2, 0.1);
  three.set_weight(0, 2, 0.1);
  CHECK_FALSE(hierarchy_check(three, 0.0));
}

TEST_CASE("sharpening drops edges at or below the median") {
  const WeightedGraph s = sharpen(four_node({0.9, 0.9, 0.1, 0.1}));
  CHECK(s.edge_count() == 2);
  CHECK(s.weight(0, 1) == 0.9);
  CHECK(s.weight(2, 3) == 0.9);
  CHECK(sharpen(four_node({0.5, 0.5, 0.5, 0.5, 0.5, 0.5})).edge_count() == 0);

  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    WeightedGraph g(7);
    for (std::size_t i = 0; i < 7; ++i) {
      for (std::size_t j = i + 1; j < 7; ++j) {
        if (uniform01(rng) < 0.7) g.set_weight(i, j, uniform01(rng));
      }
    }
    auto w = g.edge_weights();
    std::sort(w.begin(), w.end());
    const std::size_t m = w.size();
    const double median = m % 2 ? w[m / 2] : (w[m / 2 - 1] + w[m / 2]) / 2;
    const auto above = std::count_if(w.begin(), w.end(), [&](double x) { return x > median; });
    CHECK(sharpen(g).edge_count() == static_cast<std::size_t>(above));
  }
}

TEST_CASE("rlcd is a no-op when nothing needs splitting") {
  WeightedGraph g(6);
  for (std::size_t base : {0u, 3u}) {
    g.set_weight(base, base + 1, 0.9);
    g.set_weight(base, base + 2, 0.8);
    g.set_weight(base + 1, base + 2, 0.7);
  }
  const auto plain = louvain(g, 4);
  const auto refined = rlcd(g, 1.0, 4);
  CHECK(refined.communities == plain.communities);
  CHECK(refined.splits.empty());
}

TEST_CASE("rlcd always returns a refinement of its initial partition") {
  Rng rng(12);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 6 + uniform_index(rng, 10);
    std::vector<GradientVector> grads;
    for (std::size_t i = 0; i < n; ++i) {
      GradientVector v(6);
      for (double& x : v) x = uniform01(rng) - 0.3;
      grads.push_back(v);
    }
    const auto cs = rlcd(build_graph(SimilarityMatrix::from_gradients(grads)), 1.0, trial);
    CHECK(is_partition(cs, n));
    CHECK(refines(cs.communities, cs.initial));
  }
}

}  // TEST_SUITE
