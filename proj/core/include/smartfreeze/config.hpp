// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration: a nested JSON document. Parsing validates every
// field and reports all problems at once, each tagged with its key path.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "smartfreeze/dataset.hpp"
#include "smartfreeze/error.hpp"
#include "smartfreeze/nn.hpp"
#include "smartfreeze/pace.hpp"

namespace smartfreeze {

struct ModelConfig {
  Shape input_shape;
  std::vector<LayerSpec> layers;
  std::vector<std::size_t> boundaries;  // first layer index of blocks 2..T

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct DatasetConfig {
  std::string kind = "blob_images";
  std::size_t num_classes = 10;
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 50;
  double noise = 0.7;
  double separation = 3.0;

  friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

struct MemoryTier {
  std::string name;
  std::uint64_t capacity_bytes = 0;
  double proportion = 0.0;

  friend bool operator==(const MemoryTier&, const MemoryTier&) = default;
};

struct FleetConfig {
  std::size_t num_clients = 40;
  double alpha = 1.0;  // Dirichlet concentration
  std::vector<MemoryTier> memory_tiers{{"roomy", 1ULL << 40, 1.0}};
  double compute_min = 1e9;  // FLOP/s, drawn uniformly per client
  double compute_max = 4e9;

  friend bool operator==(const FleetConfig&, const FleetConfig&) = default;
};

struct SelectorConfig {
  std::optional<double> lambda;  // unset: mean(I) / mean(t) at stage start
  double epsilon = 0.1;
  std::optional<std::size_t> min_eligible;  // unset: ceil(0.05 * num_clients)
  std::uint64_t min_total_data = 0;
  std::size_t cohort_size = 10;
  double diversity_floor = 1e-6;
  double hierarchy_delta = 1.0;

  friend bool operator==(const SelectorConfig&, const SelectorConfig&) = default;
};

struct TrainingConfig {
  std::size_t local_epochs = 5;
  std::size_t batch_size = 32;
  SgdConfig sgd;
  std::size_t probe_epochs = 1;
  double rho = 1.0;  // time overhead factor on the FLOPs model

  friend bool operator==(const TrainingConfig&, const TrainingConfig&) = default;
};

struct BaselineConfig {
  std::size_t rounds = 100;

  friend bool operator==(const BaselineConfig&, const BaselineConfig&) = default;
};

struct AnalysisConfig {
  std::size_t reference_epochs = 30;
  std::size_t rounds = 60;             // federated rounds traced by analyze-cka
  std::vector<std::size_t> layers;     // layer indices compared; empty: every parameterized layer
  std::size_t probe_samples = 200;
  double stability_tolerance = 0.02;

  friend bool operator==(const AnalysisConfig&, const AnalysisConfig&) = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  ModelConfig model;
  DatasetConfig dataset;
  FleetConfig fleet;
  PaceConfig pace;
  SelectorConfig selector;
  TrainingConfig training;
  BaselineConfig baseline;
  AnalysisConfig analysis;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

// Every validation problem found, one "path: message" line each.
class ConfigErrors : public ConfigError {
 public:
  explicit ConfigErrors(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const noexcept { return problems_; }

 private:
  std::vector<std::string> problems_;
};

// Named architectures: "reference_cnn" (1x8x8 input, four conv blocks with
// 8/16/32/64 channels) and "tiny_mlp" (2-feature input, two dense blocks).
ModelConfig model_preset(const std::string& name, std::size_t num_classes);

ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config(const std::filesystem::path& path);
// Canonical JSON with the model written out layer by layer.
std::string serialize_config(const ExperimentConfig& config);

Network build_model(const ModelConfig& model, std::uint64_t seed);
std::size_t min_eligible_clients(const ExperimentConfig& config);
SyntheticSpec synthetic_spec(const ExperimentConfig& config);

}  // namespace smartfreeze
