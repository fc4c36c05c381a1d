// SPDX-License-Identifier: Apache-2.0
//
// Linear centered kernel alignment between layer activations.
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "smartfreeze/nn.hpp"

namespace smartfreeze {

// Rows are samples; trailing dimensions are flattened into features.
// Throws UndefinedMetricError when either input has zero variance.
double cka_linear(const Tensor& x, const Tensor& y);

// CKA between the outputs of each listed layer of the two networks on the
// same probe inputs. The listed layers must share their architecture.
std::vector<double> cka_trace(const Network& trained, const Network& reference,
                              const Tensor& probe, std::span<const std::size_t> layers);

// First index from which every value stays within `tolerance` of the last
// value; nullopt for an empty series.
std::optional<std::size_t> stabilization_index(std::span<const double> series,
                                               double tolerance);

// Accumulates per-round CKA values of a model against a fixed reference.
class CkaTracker {
 public:
  CkaTracker(Network reference, Tensor probe, std::vector<std::size_t> layers);

  const std::vector<double>& observe(std::size_t round, const Network& model);

  const std::vector<std::size_t>& layers() const noexcept { return layers_; }
  const std::vector<std::size_t>& rounds() const noexcept { return rounds_; }
  const std::vector<std::vector<double>>& values() const noexcept { return values_; }
  // Values of one listed layer (by position in layers()) across rounds.
  std::vector<double> series(std::size_t position) const;
  // Round at which each layer's series stabilises, nullopt before any round.
  std::vector<std::optional<std::size_t>> stabilization_rounds(double tolerance) const;

 private:
  Network reference_;
  Tensor probe_;
  std::vector<std::size_t> layers_;
  std::vector<std::size_t> rounds_;
  std::vector<std::vector<double>> values_;
};

}  // namespace smartfreeze
