// SPDX-License-Identifier: Apache-2.0
//
// JSON-lines metrics stream plus an end-of-run summary. Every line is a
// complete JSON object, so any prefix of the file is readable. Nothing
// time-of-day dependent is written; reruns produce identical bytes.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>

#include "smartfreeze/cohort.hpp"
#include "smartfreeze/orchestrator.hpp"

namespace smartfreeze {

inline constexpr int kMetricsSchemaVersion = 1;

class MetricsSink {
 public:
  // Truncates `path` and writes the schema header line.
  MetricsSink(const std::filesystem::path& path, const std::string& kind,
              std::uint64_t seed);

  void round(const RoundRecord& record);
  void stage(const StageSummary& summary);
  void communities(const CommunitySet& communities);
  void cka(std::size_t round, std::span<const std::size_t> layers,
           std::span<const double> values);
  void line(const std::string& json_object);

 private:
  std::ofstream out_;
};

std::string round_record_json(const RoundRecord& record);
std::string summary_json(const ExperimentReport& report);
void write_summary(const std::filesystem::path& path, const ExperimentReport& report);

}  // namespace smartfreeze
