// SPDX-License-Identifier: Apache-2.0
#include "smartfreeze/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "smartfreeze/error.hpp"
#include "smartfreeze/rng.hpp"

namespace smartfreeze {

Batch Dataset::gather(std::span<const std::size_t> indices) const {
  const std::size_t per = shape_size(sample_shape);
  Shape shape{indices.size()};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  Batch b{Tensor(shape), {}};
  b.labels.reserve(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t i = indices[k];
    if (i >= size()) throw ContractError("dataset index out of range");
    std::copy_n(features.data() + i * per, per, b.inputs.data() + k * per);
    b.labels.push_back(labels[i]);
  }
  return b;
}

Batch Dataset::all() const {
  std::vector<std::size_t> idx(size());
  std::iota(idx.begin(), idx.end(), 0);
  return gather(idx);
}

namespace {

std::vector<std::vector<double>> image_templates(const SyntheticSpec& spec, Rng& rng) {
  const std::size_t c = spec.sample_shape[0], h = spec.sample_shape[1], w = spec.sample_shape[2];
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> out;
  for (std::size_t k = 0; k < spec.num_classes; ++k) {
    std::vector<double> img(c * h * w, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
      // Three signed Gaussian bumps per channel.
      for (int bump = 0; bump < 3; ++bump) {
        const double cy = uniform01(rng) * static_cast<double>(h - 1);
        const double cx = uniform01(rng) * static_cast<double>(w - 1);
        const double sigma = 0.8 + 1.2 * uniform01(rng);
        const double amp = (uniform01(rng) < 0.5 ? -1.0 : 1.0) * (1.0 + uniform01(rng));
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t x = 0; x < w; ++x) {
            const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
            img[(ch * h + y) * w + x] += amp * std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
          }
        }
      }
    }
    out.push_back(std::move(img));
  }
  return out;
}

Dataset sample_split(const SyntheticSpec& spec, const std::vector<std::vector<double>>& centres,
                     std::size_t per_class, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t per = shape_size(spec.sample_shape);
  Dataset d{spec.sample_shape, spec.num_classes, {}, {}};
  d.features.reserve(per_class * spec.num_classes * per);
  // Interleave classes so prefixes of the split stay balanced.
  for (std::size_t i = 0; i < per_class; ++i) {
    for (std::size_t k = 0; k < spec.num_classes; ++k) {
      for (std::size_t f = 0; f < per; ++f) d.features.push_back(centres[k][f] + spec.noise * normal(rng));
      d.labels.push_back(k);
    }
  }
  return d;
}

}  // namespace

TrainTest make_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.num_classes < 2) throw ConfigError("dataset needs at least 2 classes");
  Rng rng(derive_seed(seed, {0xda7a}));
  std::vector<std::vector<double>> centres;
  if (spec.kind == "blob_images") {
    if (spec.sample_shape.size() != 3) throw ConfigError("blob_images needs a C x H x W shape");
    centres = image_templates(spec, rng);
  } else if (spec.kind == "blobs") {
    if (spec.sample_shape.size() != 1) throw ConfigError("blobs needs a flat shape");
    std::normal_distribution<double> normal(0.0, spec.separation);
    for (std::size_t k = 0; k < spec.num_classes; ++k) {
      std::vector<double> c(spec.sample_shape[0]);
      for (double& v : c) v = normal(rng);
      centres.push_back(std::move(c));
    }
  } else {
    throw ConfigError("unknown dataset kind '" + spec.kind + "'");
  }
  TrainTest tt;
  tt.train = sample_split(spec, centres, spec.train_per_class, rng);
  tt.test = sample_split(spec, centres, spec.test_per_class, rng);
  return tt;
}

std::vector<std::vector<std::size_t>> partition_dirichlet(
    std::span<const std::size_t> labels, std::size_t num_classes,
    std::size_t num_clients, double alpha, std::uint64_t seed) {
  if (!(alpha > 0.0)) throw ConfigError("Dirichlet alpha must be positive");
  if (num_clients == 0) throw ConfigError("need at least one client");
  if (num_clients > labels.size()) {
    throw ConfigError("cannot give " + std::to_string(num_clients) + " clients a sample each from " +
                      std::to_string(labels.size()) + " samples");
  }
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) throw InputError("label out of range in partition");
    by_class[labels[i]].push_back(i);
  }
  Rng rng(derive_seed(seed, {0xd1c7}));
  std::gamma_distribution<double> gamma(alpha, 1.0);

  std::vector<std::vector<std::size_t>> shards;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    shards.assign(num_clients, {});
    for (std::size_t k = 0; k < num_classes; ++k) {
      auto idx = by_class[k];
      for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[uniform_index(rng, i)]);
      std::vector<double> p(num_clients);
      double sum = 0.0;
      for (double& v : p) sum += (v = gamma(rng));
      if (!(sum > 0.0)) {
        std::fill(p.begin(), p.end(), 1.0);
        sum = static_cast<double>(num_clients);
      }
      double cum = 0.0;
      std::size_t start = 0;
      for (std::size_t c = 0; c < num_clients; ++c) {
        cum += p[c];
        std::size_t end = c + 1 == num_clients
                              ? idx.size()
                              : static_cast<std::size_t>(std::llround(cum / sum * static_cast<double>(idx.size())));
        end = std::clamp(end, start, idx.size());
        shards[c].insert(shards[c].end(), idx.begin() + static_cast<std::ptrdiff_t>(start),
                         idx.begin() + static_cast<std::ptrdiff_t>(end));
        start = end;
      }
    }
    if (std::none_of(shards.begin(), shards.end(), [](const auto& s) { return s.empty(); })) break;
  }
  // Still empty after every redraw: hand each empty client one sample from
  // the currently largest shard.
  for (auto& s : shards) {
    if (!s.empty()) continue;
    auto largest = std::max_element(shards.begin(), shards.end(),
                                    [](const auto& a, const auto& b) { return a.size() < b.size(); });
    s.push_back(largest->back());
    largest->pop_back();
  }
  for (auto& s : shards) std::sort(s.begin(), s.end());
  return shards;
}

}  // namespace smartfreeze
