// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "smartfreeze/nn.hpp"

namespace smartfreeze {

struct Dataset {
  Shape sample_shape;
  std::size_t num_classes = 0;
  std::vector<double> features;  // size() * shape_size(sample_shape)
  std::vector<std::size_t> labels;

  std::size_t size() const noexcept { return labels.size(); }
  Batch gather(std::span<const std::size_t> indices) const;
  Batch all() const;
};

struct SyntheticSpec {
  // "blob_images": per-class smooth C x H x W templates plus pixel noise.
  // "blobs": flat Gaussian clusters around random class centres.
  std::string kind = "blob_images";
  Shape sample_shape{1, 8, 8};
  std::size_t num_classes = 10;
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 50;
  double noise = 0.7;
  double separation = 3.0;  // blobs: std of the class centres
};

struct TrainTest {
  Dataset train;
  Dataset test;
};

TrainTest make_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

// Per class, proportions ~ Dirichlet(alpha * 1_N) deal that class's samples
// to clients. Clients left empty trigger a fresh draw. Returns disjoint index
// sets covering the dataset.
std::vector<std::vector<std::size_t>> partition_dirichlet(
    std::span<const std::size_t> labels, std::size_t num_classes,
    std::size_t num_clients, double alpha, std::uint64_t seed);

}  // namespace smartfreeze
