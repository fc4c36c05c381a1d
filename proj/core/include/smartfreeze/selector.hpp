// SPDX-License-Identifier: Apache-2.0
//
// Per-round participant selection: memory eligibility, loss-based data
// importance, utility I - lambda*t, community round-robin exploitation with
// an epsilon share of uniform exploration.
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "smartfreeze/cohort.hpp"
#include "smartfreeze/nn.hpp"
#include "smartfreeze/rng.hpp"

namespace smartfreeze {

struct UtilityRecord {
  std::size_t client = 0;
  double importance = 0.0;  // summed per-sample loss
  double time = 0.0;        // simulated local training seconds
  double util = 0.0;
  std::size_t updated_round = 0;

  void refresh(double lambda) { util = importance - lambda * time; }
};

struct SelectionConstraints {
  double lambda = 0.0;
  double epsilon = 0.1;
  std::size_t min_eligible = 1;    // phi
  std::uint64_t min_total_data = 0;  // Gamma
  std::size_t cohort_size = 10;
};

// Sum of per-sample cross-entropy of `model` over `shard`.
double data_importance(const Network& model, const Batch& shard,
                       std::size_t eval_batch = 256);

// 1 / max(floor, sum of pairwise similarities over i < j in `cohort`).
double diversity(std::span<const std::size_t> cohort, const SimilarityMatrix& omega,
                 double floor = 1e-6);

// Clients whose capacity covers `required_bytes`, ascending. Throws
// InfeasibleStageError when fewer than `min_eligible` qualify.
std::vector<std::size_t> eligible(std::span<const std::uint64_t> capacities,
                                  std::uint64_t required_bytes,
                                  std::size_t min_eligible);

struct Selection {
  std::vector<std::size_t> clients;   // ascending
  std::vector<std::size_t> exploited; // in pick order
  std::vector<std::size_t> explored;  // in pick order
  std::uint64_t total_data = 0;
  std::optional<std::string> constraint_failure;
};

// `utility` and `data_sizes` are indexed by client id.
Selection select(const CommunitySet& communities, std::span<const double> utility,
                 const SelectionConstraints& constraints,
                 std::span<const std::size_t> eligible_clients,
                 std::span<const std::size_t> data_sizes, Rng& rng);

// Div(S) + sum of importance - lambda * slowest client time. Used for
// logging and for checking the heuristic, never for selection itself.
double objective(std::span<const std::size_t> cohort, const SimilarityMatrix& omega,
                 std::span<const double> importance, std::span<const double> times,
                 double lambda, double floor = 1e-6);

}  // namespace smartfreeze
