// SPDX-License-Identifier: Apache-2.0
#include "smartfreeze/metrics.hpp"

#include "json.hpp"
#include "smartfreeze/error.hpp"

namespace smartfreeze {

using nlohmann::json;

namespace {

json optional_number(const std::optional<double>& v) {
  return v ? json(*v) : json(nullptr);
}

json communities_json(const CommunitySet& cs) {
  json splits = json::array();
  for (const auto& s : cs.splits) splits.push_back({{"parent", s.parent}, {"children", s.children}});
  return {{"communities", cs.communities}, {"initial", cs.initial}, {"splits", splits}};
}

json memory_json(const MemoryBreakdown& m) {
  return {{"activation_bytes", m.activation_bytes},
          {"parameter_bytes", m.parameter_bytes},
          {"optimizer_bytes", m.optimizer_bytes},
          {"forward_peak_bytes", m.forward_peak_bytes},
          {"total_bytes", m.total()}};
}

json stage_json(const StageSummary& s) {
  return {{"stage", s.stage},
          {"rounds", s.rounds},
          {"converged", s.converged},
          {"memory", memory_json(s.memory)},
          {"flops_per_sample", s.flops_per_sample},
          {"eligible", s.eligible},
          {"cohort_size", s.cohort_size},
          {"lambda", s.lambda},
          {"frozen_hash_entry", s.frozen_hash_entry},
          {"frozen_hash_exit", s.frozen_hash_exit}};
}

json record_json(const RoundRecord& r) {
  return {{"type", "round"},
          {"round", r.round},
          {"stage", r.stage},
          {"stage_round", r.stage_round},
          {"selected", r.selected},
          {"train_loss", r.train_loss},
          {"test_accuracy", r.test_accuracy},
          {"perturbation", optional_number(r.perturbation)},
          {"smoothed", optional_number(r.smoothed)},
          {"slope", optional_number(r.slope)},
          {"freeze", r.freeze},
          {"round_seconds", r.round_seconds},
          {"cumulative_seconds", r.cumulative_seconds},
          {"memory_bytes", r.memory_bytes},
          {"objective", r.objective},
          {"constraint_failure", r.constraint_failure ? json(*r.constraint_failure) : json(nullptr)}};
}

}  // namespace

MetricsSink::MetricsSink(const std::filesystem::path& path, const std::string& kind,
                         std::uint64_t seed)
    : out_(path, std::ios::binary | std::ios::trunc) {
  if (!out_) throw InputError("cannot write metrics file " + path.string());
  line(json{{"type", "header"},
            {"schema", "smartfreeze-metrics"},
            {"version", kMetricsSchemaVersion},
            {"kind", kind},
            {"seed", seed}}
           .dump());
}

void MetricsSink::line(const std::string& json_object) {
  out_ << json_object << '\n';
  out_.flush();
}

void MetricsSink::round(const RoundRecord& record) { line(record_json(record).dump()); }

void MetricsSink::stage(const StageSummary& summary) {
  json j = stage_json(summary);
  j["type"] = "stage";
  line(j.dump());
}

void MetricsSink::communities(const CommunitySet& communities) {
  json j = communities_json(communities);
  j["type"] = "communities";
  line(j.dump());
}

void MetricsSink::cka(std::size_t round, std::span<const std::size_t> layers,
                      std::span<const double> values) {
  json j{{"type", "cka"}, {"round", round}, {"layers", json::array()}, {"values", json::array()}};
  for (auto l : layers) j["layers"].push_back(l);
  for (auto v : values) j["values"].push_back(v);
  line(j.dump());
}

std::string round_record_json(const RoundRecord& record) { return record_json(record).dump(); }

std::string summary_json(const ExperimentReport& r) {
  json stages = json::array();
  for (const auto& s : r.stages) {
    json j = stage_json(s);
    j["reduction_vs_full"] =
        r.full_training_bytes == 0
            ? 0.0
            : 1.0 - static_cast<double>(s.memory.total()) / static_cast<double>(r.full_training_bytes);
    stages.push_back(j);
  }
  json j{{"schema", "smartfreeze-summary"},
         {"version", kMetricsSchemaVersion},
         {"kind", r.kind},
         {"completed", r.completed},
         {"memory_wall", r.memory_wall},
         {"error", r.error.empty() ? json(nullptr) : json(r.error)},
         {"rounds", r.rounds.size()},
         {"final_accuracy", r.final_accuracy},
         {"total_seconds", r.total_seconds},
         {"full_training_bytes", r.full_training_bytes},
         {"clients_fitting_full_model", r.eligible_full},
         {"stages", stages},
         {"warnings", r.warnings}};
  if (r.kind == "smartfreeze") j["communities"] = communities_json(r.communities);
  return j.dump(2) + "\n";
}

void write_summary(const std::filesystem::path& path, const ExperimentReport& report) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write summary file " + path.string());
  out << summary_json(report);
}

}  // namespace smartfreeze
