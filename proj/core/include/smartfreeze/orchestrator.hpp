// SPDX-License-Identifier: Apache-2.0
//
// Simulation engine: fleet construction, local training, weighted
// aggregation, the stage loop with its simulated clock, and the full-model
// baselines.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "smartfreeze/cohort.hpp"
#include "smartfreeze/config.hpp"
#include "smartfreeze/cost_model.hpp"
#include "smartfreeze/dataset.hpp"
#include "smartfreeze/progressive.hpp"

namespace smartfreeze {

struct ClientProfile {
  std::size_t id = 0;
  std::string tier;
  std::uint64_t memory_capacity = 0;  // bytes
  double compute_rate = 0.0;          // FLOP/s
  std::vector<std::size_t> shard;     // indices into the training set
  double importance = 0.0;
  double time = 0.0;
  double util = 0.0;
};

struct Simulation {
  ExperimentConfig config;
  Dataset train;
  Dataset test;
  std::vector<ClientProfile> clients;
  Network initial_model;
  BlockPartition partition;
};

// Dataset, Dirichlet shards, memory tiers (assigned by a seeded shuffle in
// the configured proportions), compute rates and the initial global model.
Simulation build_simulation(const ExperimentConfig& config);

struct LocalUpdate {
  std::vector<double> params;  // trainable layers, flattened in layer order
  double loss = 0.0;           // mean per-sample loss of the last epoch
  std::size_t samples = 0;
};

// E epochs of minibatch SGD updating only the trainable layers of `model`.
// With epochs == 0 the parameters come back unchanged and the loss is the
// evaluation loss on the shard.
LocalUpdate local_train(const Network& model, const Batch& shard,
                        std::size_t epochs, std::size_t batch_size,
                        const SgdConfig& sgd, std::uint64_t seed);

// Element-wise sum of (w_i / sum w) * params_i, accumulated in input order.
std::vector<double> aggregate(std::span<const std::vector<double>> params,
                              std::span<const double> weights);

double evaluate_accuracy(const Network& model, const Dataset& data);

struct RoundRecord {
  std::size_t round = 0;        // global, 1-based
  std::size_t stage = 0;        // 0 for full-model baselines
  std::size_t stage_round = 0;  // 1-based within the stage
  std::vector<std::size_t> selected;
  double train_loss = 0.0;
  double test_accuracy = 0.0;
  std::optional<double> perturbation;
  std::optional<double> smoothed;
  std::optional<double> slope;
  bool freeze = false;
  double round_seconds = 0.0;
  double cumulative_seconds = 0.0;
  std::uint64_t memory_bytes = 0;
  double objective = 0.0;
  std::optional<std::string> constraint_failure;
};

struct StageSummary {
  std::size_t stage = 0;
  std::size_t rounds = 0;
  bool converged = false;  // false when the round cap ended the stage
  MemoryBreakdown memory;
  std::uint64_t flops_per_sample = 0;
  std::size_t eligible = 0;
  std::size_t cohort_size = 0;
  double lambda = 0.0;
  std::uint64_t frozen_hash_entry = 0;
  std::uint64_t frozen_hash_exit = 0;
};

struct RunHooks {
  std::function<void(const RoundRecord&)> on_round;
  std::function<void(const StageSummary&)> on_stage;
  // Global model after each round, e.g. for checkpointing.
  std::function<void(std::size_t round, const Network&)> on_model;
  // Replaces the pace controller's decision when set.
  std::function<bool(std::size_t stage, std::size_t stage_round)> freeze_override;
};

struct ExperimentReport {
  std::string kind;  // "smartfreeze", "fedavg_full" or "exclusive_fl"
  bool completed = false;
  bool memory_wall = false;
  std::string error;
  std::vector<RoundRecord> rounds;
  std::vector<StageSummary> stages;
  std::vector<std::string> warnings;
  CommunitySet communities;
  double final_accuracy = 0.0;
  double total_seconds = 0.0;
  std::uint64_t full_training_bytes = 0;
  std::size_t eligible_full = 0;
  Network final_model;
};

struct StageState {
  const Simulation* sim = nullptr;
  const CommunitySet* communities = nullptr;
  const SimilarityMatrix* omega = nullptr;
  std::size_t round = 0;  // global rounds completed
  double clock = 0.0;
  std::vector<std::string> warnings;
};

// Runs one stage to its freeze decision or round cap, updating `stage` in
// place. InfeasibleStageError carries the stage number in its message.
StageSummary run_stage(StageModel& stage, StageState& state,
                       std::vector<RoundRecord>& records,
                       const RunHooks& hooks = {});

ExperimentReport run_experiment(const ExperimentConfig& config,
                                const RunHooks& hooks = {});

enum class BaselineKind { fedavg_full, exclusive_fl };
std::string to_string(BaselineKind kind);
BaselineKind baseline_kind_from_string(const std::string& name);

ExperimentReport run_baseline(BaselineKind kind, const ExperimentConfig& config,
                              const RunHooks& hooks = {});

// Centralised minibatch SGD of every layer on the full training set.
Network train_centralized(const Network& init, const Dataset& data,
                          std::size_t epochs, std::size_t batch_size,
                          const SgdConfig& sgd, std::uint64_t seed);

}  // namespace smartfreeze
