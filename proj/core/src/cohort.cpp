// SPDX-License-Identifier: Apache-2.0
#include "smartfreeze/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "smartfreeze/error.hpp"
#include "smartfreeze/rng.hpp"

namespace smartfreeze {

namespace {

std::size_t output_layer_index(const Network& model) {
  for (std::size_t i = model.layers.size(); i-- > 0;) {
    if (model.layers[i].spec.has_parameters()) return i;
  }
  throw ConfigError("model has no parameterized output layer");
}

Batch slice(const Batch& shard, std::span<const std::size_t> rows) {
  const std::size_t per = shard.inputs.size() / std::max<std::size_t>(1, shard.size());
  Shape shape = shard.inputs.shape();
  shape[0] = rows.size();
  Batch b{Tensor(shape), {}};
  b.labels.reserve(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    std::copy_n(shard.inputs.data() + rows[k] * per, per, b.inputs.data() + k * per);
    b.labels.push_back(shard.labels[rows[k]]);
  }
  return b;
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Dense level graph used during Louvain aggregation. Entry (c, d) holds the
// ordered-pair weight sum between super-nodes, so the diagonal is twice the
// internal edge weight.
struct LevelGraph {
  std::size_t n = 0;
  std::vector<double> w;
  double at(std::size_t i, std::size_t j) const { return w[i * n + j]; }
};

// One local-moving phase; returns true if any node changed community.
bool local_moves(const LevelGraph& g, std::vector<std::size_t>& comm,
                 const std::vector<std::size_t>& order) {
  const std::size_t n = g.n;
  std::vector<double> k(n, 0.0), tot(n, 0.0);
  double m2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) k[i] += g.at(i, j);
    m2 += k[i];
  }
  if (m2 <= 0.0) return false;
  for (std::size_t i = 0; i < n; ++i) tot[comm[i]] += k[i];

  bool any_move = false;
  std::vector<double> links(n);
  for (std::size_t pass = 0; pass < 1000; ++pass) {
    bool moved = false;
    for (std::size_t i : order) {
      const std::size_t old = comm[i];
      std::fill(links.begin(), links.end(), 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        if (j != i && g.at(i, j) > 0.0) links[comm[j]] += g.at(i, j);
      }
      tot[old] -= k[i];
      std::size_t best = old;
      double best_gain = links[old] - tot[old] * k[i] / m2;
      for (std::size_t c = 0; c < n; ++c) {
        if (c == old || links[c] <= 0.0) continue;
        const double gain = links[c] - tot[c] * k[i] / m2;
        if (gain > best_gain + 1e-12) {
          best_gain = gain;
          best = c;
        }
      }
      tot[best] += k[i];
      comm[i] = best;
      if (best != old) moved = true;
    }
    if (!moved) break;
    any_move = true;
  }
  return any_move;
}

// Relabels communities 0..K-1 in order of first appearance.
std::size_t renumber(std::vector<std::size_t>& comm) {
  std::map<std::size_t, std::size_t> ids;
  for (auto& c : comm) {
    auto [it, inserted] = ids.emplace(c, ids.size());
    c = it->second;
  }
  return ids.size();
}

std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
  return order;
}

}  // namespace

std::vector<std::optional<GradientVector>> probe_gradients(
    const Network& model, const std::vector<Batch>& shards,
    std::size_t batch_size, const SgdConfig& sgd, std::uint64_t seed,
    std::size_t epochs) {
  if (batch_size == 0) throw ConfigError("probe batch size must be >= 1");
  const std::size_t out_idx = output_layer_index(model);
  Network base = model;
  for (auto& l : base.layers) l.spec.trainable = false;
  base.layers[out_idx].spec.trainable = true;
  const auto mask = base.trainable_mask();

  std::vector<std::optional<GradientVector>> result(shards.size());
  for (std::size_t c = 0; c < shards.size(); ++c) {
    const Batch& shard = shards[c];
    if (shard.size() == 0) continue;
    Network net = base;
    auto opt = make_optimizer(net, sgd);
    GradientVector acc(net.layers[out_idx].parameter_count(), 0.0);
    std::size_t batches = 0;
    Rng rng(derive_seed(seed, {0x9e0be}));
    std::vector<std::size_t> rows(shard.size());
    for (std::size_t e = 0; e < epochs; ++e) {
      std::iota(rows.begin(), rows.end(), 0);
      for (std::size_t i = rows.size(); i > 1; --i) std::swap(rows[i - 1], rows[uniform_index(rng, i)]);
      for (std::size_t start = 0; start < rows.size(); start += batch_size) {
        const std::size_t end = std::min(rows.size(), start + batch_size);
        const Batch b = slice(shard, std::span(rows).subspan(start, end - start));
        const auto acts = forward(net, b.inputs);
        const auto grads = backward(net, b.inputs, acts, b.labels, mask);
        const auto& gw = grads.at({out_idx, ParamId::Role::weight});
        const auto& gb = grads.at({out_idx, ParamId::Role::bias});
        for (std::size_t i = 0; i < gw.size(); ++i) acc[i] += gw[i];
        for (std::size_t i = 0; i < gb.size(); ++i) acc[gw.size() + i] += gb[i];
        ++batches;
        sgd_step(net, grads, opt);
      }
    }
    for (double& v : acc) v /= static_cast<double>(batches);
    result[c] = std::move(acc);
  }
  return result;
}

double similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ContractError("similarity: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) {
    throw UndefinedMetricError("cosine similarity undefined for a zero vector");
  }
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

SimilarityMatrix::SimilarityMatrix(std::size_t n) : n_(n), values_(n * n, 0.0) {
  for (std::size_t i = 0; i < n; ++i) values_[i * n + i] = 1.0;
}

SimilarityMatrix SimilarityMatrix::from_gradients(const std::vector<GradientVector>& grads) {
  SimilarityMatrix m(grads.size());
  for (std::size_t i = 0; i < grads.size(); ++i) {
    for (std::size_t j = i + 1; j < grads.size(); ++j) m.set(i, j, similarity(grads[i], grads[j]));
  }
  return m;
}

void SimilarityMatrix::set(std::size_t i, std::size_t j, double v) {
  values_[i * n_ + j] = v;
  values_[j * n_ + i] = v;
}

WeightedGraph::WeightedGraph(std::size_t n) : n_(n), w_(n * n, 0.0) {}

void WeightedGraph::set_weight(std::size_t i, std::size_t j, double w) {
  if (i == j) throw ContractError("graph has no self-loops");
  if (w < 0.0) throw ContractError("graph weights must be non-negative");
  w_[i * n_ + j] = w;
  w_[j * n_ + i] = w;
}

double WeightedGraph::degree(std::size_t i) const {
  double d = 0.0;
  for (std::size_t j = 0; j < n_; ++j) d += w_[i * n_ + j];
  return d;
}

double WeightedGraph::total_weight() const {
  double t = 0.0;
  for (std::size_t i = 0; i < n_; ++i) {
    for (std::size_t j = i + 1; j < n_; ++j) t += w_[i * n_ + j];
  }
  return t;
}

std::size_t WeightedGraph::edge_count() const {
  return edge_weights().size();
}

std::vector<double> WeightedGraph::edge_weights() const {
  std::vector<double> out;
  for (std::size_t i = 0; i < n_; ++i) {
    for (std::size_t j = i + 1; j < n_; ++j) {
      if (w_[i * n_ + j] > 0.0) out.push_back(w_[i * n_ + j]);
    }
  }
  return out;
}

WeightedGraph WeightedGraph::induced(std::span<const std::size_t> nodes) const {
  WeightedGraph g(nodes.size());
  for (std::size_t a = 0; a < nodes.size(); ++a) {
    for (std::size_t b = a + 1; b < nodes.size(); ++b) {
      const double w = weight(nodes[a], nodes[b]);
      if (w > 0.0) g.set_weight(a, b, w);
    }
  }
  return g;
}

WeightedGraph build_graph(const SimilarityMatrix& omega) {
  WeightedGraph g(omega.size());
  for (std::size_t i = 0; i < omega.size(); ++i) {
    for (std::size_t j = i + 1; j < omega.size(); ++j) {
      const double w = std::max(0.0, omega(i, j));
      if (w > 0.0) g.set_weight(i, j, w);
    }
  }
  return g;
}

std::size_t CommunitySet::node_count() const {
  std::size_t n = 0;
  for (const auto& c : communities) n += c.size();
  return n;
}

std::vector<std::size_t> CommunitySet::labels() const {
  std::vector<std::size_t> out(node_count());
  for (std::size_t c = 0; c < communities.size(); ++c) {
    for (auto v : communities[c]) out.at(v) = c;
  }
  return out;
}

std::vector<Community> normalise_partition(const std::vector<std::size_t>& labels) {
  std::map<std::size_t, Community> groups;
  for (std::size_t v = 0; v < labels.size(); ++v) groups[labels[v]].push_back(v);
  std::vector<Community> out;
  for (auto& [_, members] : groups) out.push_back(std::move(members));
  std::sort(out.begin(), out.end(),
            [](const Community& a, const Community& b) { return a.front() < b.front(); });
  return out;
}

double modularity(const WeightedGraph& graph, const std::vector<std::size_t>& labels) {
  const std::size_t n = graph.size();
  if (labels.size() != n) throw ContractError("modularity: label count mismatch");
  const double m2 = 2.0 * graph.total_weight();
  if (m2 <= 0.0) return 0.0;
  std::map<std::size_t, double> in, tot;
  for (std::size_t i = 0; i < n; ++i) {
    tot[labels[i]] += graph.degree(i);
    for (std::size_t j = 0; j < n; ++j) {
      if (labels[i] == labels[j]) in[labels[i]] += graph.weight(i, j);
    }
  }
  double q = 0.0;
  for (const auto& [c, t] : tot) q += in[c] / m2 - (t / m2) * (t / m2);
  return q;
}

CommunitySet louvain(const WeightedGraph& graph, std::uint64_t seed) {
  const std::size_t n = graph.size();
  std::vector<std::size_t> node_comm(n);
  std::iota(node_comm.begin(), node_comm.end(), 0);

  LevelGraph level{n, std::vector<double>(n * n, 0.0)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) level.w[i * n + j] = graph.weight(i, j);
  }

  for (std::size_t depth = 0; level.n > 1; ++depth) {
    std::vector<std::size_t> comm(level.n);
    std::iota(comm.begin(), comm.end(), 0);
    const auto order = shuffled_order(level.n, derive_seed(seed, {depth}));
    if (!local_moves(level, comm, order)) break;
    const std::size_t k = renumber(comm);
    for (auto& c : node_comm) c = comm[c];
    if (k == level.n) break;
    LevelGraph next{k, std::vector<double>(k * k, 0.0)};
    for (std::size_t i = 0; i < level.n; ++i) {
      for (std::size_t j = 0; j < level.n; ++j) {
        next.w[comm[i] * k + comm[j]] += level.at(i, j);
      }
    }
    level = std::move(next);
  }

  CommunitySet out;
  out.communities = normalise_partition(node_comm);
  out.initial = out.communities;
  return out;
}

bool hierarchy_check(const WeightedGraph& subgraph, double delta) {
  if (subgraph.size() < 4) return false;
  const auto weights = subgraph.edge_weights();
  if (weights.size() < 2) return false;
  const double med = median_of(weights);
  double above = 0.0, below = 0.0, mean = 0.0;
  std::size_t n_above = 0, n_below = 0;
  for (double w : weights) {
    mean += w;
    if (w > med) {
      above += w;
      ++n_above;
    } else {
      below += w;
      ++n_below;
    }
  }
  if (n_above == 0 || n_below == 0) return false;
  mean /= static_cast<double>(weights.size());
  double var = 0.0;
  for (double w : weights) var += (w - mean) * (w - mean);
  const double sd = std::sqrt(var / static_cast<double>(weights.size()));
  const double gap = above / static_cast<double>(n_above) - below / static_cast<double>(n_below);
  return gap > delta * sd;
}

WeightedGraph sharpen(const WeightedGraph& subgraph) {
  const auto weights = subgraph.edge_weights();
  WeightedGraph out(subgraph.size());
  if (weights.empty()) return out;
  const double med = median_of(weights);
  for (std::size_t i = 0; i < subgraph.size(); ++i) {
    for (std::size_t j = i + 1; j < subgraph.size(); ++j) {
      const double w = subgraph.weight(i, j);
      if (w > med) out.set_weight(i, j, w);
    }
  }
  return out;
}

namespace {

struct RlcdState {
  const WeightedGraph& graph;
  double delta;
  std::uint64_t seed;
  std::size_t calls = 0;
  std::vector<Community> done;
  std::vector<SplitRecord> splits;
};

// `members` are original node ids; `sub` is the graph over them (possibly
// already sharpened).
void refine(RlcdState& st, const Community& members, const WeightedGraph& sub) {
  if (!hierarchy_check(sub, st.delta)) {
    st.done.push_back(members);
    return;
  }
  const WeightedGraph sharp = sharpen(sub);
  const auto parts = louvain(sharp, derive_seed(st.seed, {0x41cd, st.calls++})).communities;
  if (parts.size() == 1) {
    // Still one block: keep sharpening; edge count strictly shrinks.
    refine(st, members, sharp);
    return;
  }
  SplitRecord rec{members, {}};
  for (const auto& part : parts) {
    Community mapped;
    for (auto local : part) mapped.push_back(members[local]);
    rec.children.push_back(mapped);
  }
  st.splits.push_back(rec);
  for (const auto& child : rec.children) refine(st, child, st.graph.induced(child));
}

}  // namespace

CommunitySet rlcd(const WeightedGraph& graph, double delta, std::uint64_t seed) {
  const auto initial = louvain(graph, seed).communities;
  RlcdState st{graph, delta, seed, 0, {}, {}};
  for (const auto& c : initial) refine(st, c, graph.induced(c));
  CommunitySet out;
  for (auto& c : st.done) std::sort(c.begin(), c.end());
  std::sort(st.done.begin(), st.done.end(),
            [](const Community& a, const Community& b) { return a.front() < b.front(); });
  out.communities = std::move(st.done);
  out.initial = initial;
  out.splits = std::move(st.splits);
  return out;
}

}  // namespace smartfreeze
