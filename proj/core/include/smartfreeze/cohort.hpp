// SPDX-License-Identifier: Apache-2.0
//
// Client data-distribution structure inferred from output-layer gradients:
// cosine similarity matrix, weighted graph, Louvain modularity optimisation
// and the recursive median-sharpening refinement (RL-CD).
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "smartfreeze/nn.hpp"

namespace smartfreeze {

using GradientVector = std::vector<double>;

// Flattened gradient (weights then bias) of the model's last parameterized
// layer, averaged over one local epoch in which only that layer is updated.
// Empty shards yield nullopt. The batch order depends only on `seed`, so
// identical shards give identical vectors.
std::vector<std::optional<GradientVector>> probe_gradients(
    const Network& model, const std::vector<Batch>& shards,
    std::size_t batch_size, const SgdConfig& sgd, std::uint64_t seed,
    std::size_t epochs = 1);

// Cosine similarity; throws UndefinedMetricError for a zero vector.
double similarity(std::span<const double> a, std::span<const double> b);

class SimilarityMatrix {
 public:
  SimilarityMatrix() = default;
  explicit SimilarityMatrix(std::size_t n);
  static SimilarityMatrix from_gradients(const std::vector<GradientVector>& grads);

  std::size_t size() const noexcept { return n_; }
  double operator()(std::size_t i, std::size_t j) const { return values_[i * n_ + j]; }
  void set(std::size_t i, std::size_t j, double v);  // symmetric

 private:
  std::size_t n_ = 0;
  std::vector<double> values_;
};

class WeightedGraph {
 public:
  WeightedGraph() = default;
  explicit WeightedGraph(std::size_t n);

  std::size_t size() const noexcept { return n_; }
  double weight(std::size_t i, std::size_t j) const { return w_[i * n_ + j]; }
  void set_weight(std::size_t i, std::size_t j, double w);  // symmetric, i != j
  double degree(std::size_t i) const;
  double total_weight() const;  // sum over unordered edges
  std::size_t edge_count() const;
  // Positive weights over unordered pairs i < j.
  std::vector<double> edge_weights() const;
  WeightedGraph induced(std::span<const std::size_t> nodes) const;

 private:
  std::size_t n_ = 0;
  std::vector<double> w_;
};

// w(i,j) = max(0, similarity(i,j)) off the diagonal.
WeightedGraph build_graph(const SimilarityMatrix& omega);

using Community = std::vector<std::size_t>;

struct SplitRecord {
  Community parent;
  std::vector<Community> children;
};

struct CommunitySet {
  // Members sorted ascending; communities ordered by smallest member.
  std::vector<Community> communities;
  // Louvain partition before any sharpening split.
  std::vector<Community> initial;
  std::vector<SplitRecord> splits;

  std::size_t node_count() const;
  std::vector<std::size_t> labels() const;  // community index per node
};

std::vector<Community> normalise_partition(const std::vector<std::size_t>& labels);

// Newman modularity of a node labelling.
double modularity(const WeightedGraph& graph, const std::vector<std::size_t>& labels);

// Two-phase Louvain (local moves + aggregation). Node visit order is a
// permutation fixed by `seed`.
CommunitySet louvain(const WeightedGraph& graph, std::uint64_t seed);

// True when the community's edge weights show a clear split around their
// median: mean(above) - mean(at or below) > delta * std. Always false for
// fewer than 4 nodes or 2 edges.
bool hierarchy_check(const WeightedGraph& subgraph, double delta);

// Drops every edge whose weight is at or below the median edge weight.
WeightedGraph sharpen(const WeightedGraph& subgraph);

// Louvain followed by recursive sharpen + re-partition of every community
// that fails the hierarchy test.
CommunitySet rlcd(const WeightedGraph& graph, double delta, std::uint64_t seed);

}  // namespace smartfreeze
