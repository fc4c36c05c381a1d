// SPDX-License-Identifier: Apache-2.0
//
// Independent reference computations used to check the library. These are
// written from the formulas directly and share no code paths with the
// implementations they check, apart from forward() in the finite-difference
// oracle.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "smartfreeze/nn.hpp"
#include "smartfreeze/progressive.hpp"
#include "smartfreeze/rng.hpp"

namespace oracle {

using smartfreeze::Batch;
using smartfreeze::LayerKind;
using smartfreeze::Network;
using smartfreeze::Tensor;

inline double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Softmax cross-entropy of one row, computed the textbook way.
inline double row_ce(const double* logits, std::size_t c, std::size_t label) {
  double m = logits[0];
  for (std::size_t j = 1; j < c; ++j) m = std::max(m, logits[j]);
  double z = 0.0;
  for (std::size_t j = 0; j < c; ++j) z += std::exp(logits[j] - m);
  return -(logits[label] - m - std::log(z));
}

inline double mean_ce(const Tensor& logits, const std::vector<std::size_t>& labels) {
  const std::size_t c = logits.dim(1);
  double s = 0.0;
  for (std::size_t r = 0; r < labels.size(); ++r) s += row_ce(logits.data() + r * c, c, labels[r]);
  return s / static_cast<double>(labels.size());
}

// ||sum of the last Q differences|| / sum of their norms.
inline double perturbation(const std::vector<std::vector<double>>& snaps, std::size_t q) {
  const std::size_t n = snaps.size();
  std::vector<double> sum(snaps[0].size(), 0.0);
  double denom = 0.0;
  for (std::size_t k = n - q; k < n; ++k) {
    std::vector<double> d(sum.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
      d[i] = snaps[k][i] - snaps[k - 1][i];
      sum[i] += d[i];
    }
    denom += norm(d);
  }
  return denom == 0.0 ? 0.0 : norm(sum) / denom;
}

inline double ols_slope(const std::vector<double>& y) {
  const double n = static_cast<double>(y.size());
  const double xbar = (n - 1) / 2.0;
  const double ybar = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    sxy += (static_cast<double>(i) - xbar) * (y[i] - ybar);
    sxx += (static_cast<double>(i) - xbar) * (static_cast<double>(i) - xbar);
  }
  return sxy / sxx;
}

// Central finite differences of the mean CE loss with respect to every
// parameter of the trainable layers. Returns the gradients in
// flatten_parameters order over all layers (zeros for frozen layers).
inline std::vector<double> finite_difference(Network net, const Batch& batch, double h = 1e-5) {
  std::vector<double> out;
  for (auto& layer : net.layers) {
    for (Tensor* t : {&layer.weight, &layer.bias}) {
      for (std::size_t i = 0; i < t->size(); ++i) {
        if (!layer.spec.trainable) {
          out.push_back(0.0);
          continue;
        }
        const double keep = (*t)[i];
        (*t)[i] = keep + h;
        const double up = mean_ce(smartfreeze::forward(net, batch.inputs).back(), batch.labels);
        (*t)[i] = keep - h;
        const double down = mean_ce(smartfreeze::forward(net, batch.inputs).back(), batch.labels);
        (*t)[i] = keep;
        out.push_back((up - down) / (2 * h));
      }
    }
  }
  return out;
}

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

// Per-sample output sizes of every layer, recomputed from the layer specs.
inline std::vector<std::uint64_t> output_sizes(const Network& net) {
  std::vector<std::uint64_t> sizes;
  std::vector<std::size_t> s = net.input_shape;
  for (const auto& l : net.layers) {
    const auto& p = l.spec;
    switch (p.kind) {
      case LayerKind::dense: s = {p.out}; break;
      case LayerKind::conv2d:
        s = {p.out, (s[1] + 2 * p.pad - p.kernel) / p.stride + 1,
             (s[2] + 2 * p.pad - p.kernel) / p.stride + 1};
        break;
      case LayerKind::maxpool2x2: s = {s[0], s[1] / 2, s[2] / 2}; break;
      case LayerKind::flatten: s = {s[0] * (s.size() > 1 ? s[1] * s[2] : 1)}; break;
      case LayerKind::relu: break;
    }
    std::uint64_t n = 1;
    for (auto d : s) n *= d;
    sizes.push_back(n);
  }
  return sizes;
}

inline std::uint64_t param_count(const smartfreeze::LayerSpec& p) {
  if (p.kind == LayerKind::dense) return p.in * p.out + p.out;
  if (p.kind == LayerKind::conv2d) return p.kernel * p.kernel * p.in * p.out + p.out;
  return 0;
}

struct Memory {
  std::uint64_t total = 0;
};

// Stage memory from layer sizes: 2*(block + op activations)*batch + all
// params + trainable params + the largest block activation sum * batch.
inline std::uint64_t stage_memory_bytes(const smartfreeze::StageModel& stage, std::uint64_t batch) {
  const auto sizes = output_sizes(stage.network);
  auto act = [&](smartfreeze::LayerRange r) {
    std::uint64_t s = 0;
    for (std::size_t i = r.first; i < r.last; ++i) s += sizes[i];
    return s;
  };
  std::uint64_t params = 0, trainable = 0;
  for (const auto& l : stage.network.layers) {
    params += param_count(l.spec);
    if (l.spec.trainable) trainable += param_count(l.spec);
  }
  std::uint64_t peak = act(stage.output_range);
  for (const auto& r : stage.block_ranges) peak = std::max(peak, act(r));
  const std::uint64_t reals =
      2 * (act(stage.trainable_block()) + act(stage.output_range)) * batch + params + trainable + peak * batch;
  return reals * 8;
}

inline std::uint64_t full_memory_bytes(const Network& net, std::uint64_t batch) {
  const auto sizes = output_sizes(net);
  std::uint64_t act = 0, params = 0;
  for (auto s : sizes) act += s;
  for (const auto& l : net.layers) params += param_count(l.spec);
  return (2 * act * batch + 2 * params) * 8;
}

// Per-sample training FLOPs: forward everywhere, backward (2x) for trainable layers.
inline std::uint64_t training_flops(const Network& net, bool all_trainable) {
  std::uint64_t total = 0;
  std::vector<std::size_t> s = net.input_shape;
  for (const auto& l : net.layers) {
    const auto& p = l.spec;
    std::uint64_t fp = 0;
    if (p.kind == LayerKind::dense) {
      fp = 2 * p.in * p.out;
      s = {p.out};
    } else if (p.kind == LayerKind::conv2d) {
      const std::size_t ho = (s[1] + 2 * p.pad - p.kernel) / p.stride + 1;
      const std::size_t wo = (s[2] + 2 * p.pad - p.kernel) / p.stride + 1;
      fp = 2 * p.kernel * p.kernel * p.in * p.out * ho * wo;
      s = {p.out, ho, wo};
    } else if (p.kind == LayerKind::maxpool2x2) {
      s = {s[0], s[1] / 2, s[2] / 2};
    } else if (p.kind == LayerKind::flatten) {
      s = {s[0] * (s.size() > 1 ? s[1] * s[2] : 1)};
    }
    const bool trains = all_trainable ? p.kind == LayerKind::dense || p.kind == LayerKind::conv2d
                                      : p.trainable;
    total += fp + (trains ? 2 * fp : 0);
  }
  return total;
}

inline double modularity(const std::vector<std::vector<double>>& w, const std::vector<std::size_t>& label) {
  const std::size_t n = w.size();
  std::vector<double> k(n, 0.0);
  double two_m = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j) k[i] += w[i][j];
    }
    two_m += k[i];
  }
  if (two_m == 0.0) return 0.0;
  double q = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (label[i] != label[j]) continue;
      const double a = i == j ? 0.0 : w[i][j];
      q += a - k[i] * k[j] / two_m;
    }
  }
  return q / two_m;
}

}  // namespace oracle
