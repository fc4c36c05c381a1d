// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <set>

#include "CLI11.hpp"
#include "json.hpp"
#include "smartfreeze/checkpoint.hpp"
#include "smartfreeze/cka.hpp"
#include "smartfreeze/config.hpp"
#include "smartfreeze/error.hpp"
#include "smartfreeze/metrics.hpp"
#include "smartfreeze/orchestrator.hpp"
#include "smartfreeze/progressive.hpp"

namespace smartfreeze::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::set<std::string> kCommands{"run", "baseline", "analyze-cka", "export-similarity",
                                      "train-reference"};

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> stage_cap;
  std::optional<std::size_t> rounds;
  std::string kind = "fedavg_full";
  std::string reference;
  std::string checkpoints;
};

ExperimentConfig load(const Options& o) {
  ExperimentConfig c = parse_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.out) c.output_dir = *o.out;
  if (o.stage_cap) {
    if (*o.stage_cap == 0) throw ConfigErrors({"--stage-cap: must be >= 1"});
    c.pace.stage_round_cap = *o.stage_cap;
  }
  if (o.rounds) {
    if (*o.rounds == 0) throw ConfigErrors({"--rounds: must be >= 1"});
    c.baseline.rounds = *o.rounds;
    c.analysis.rounds = *o.rounds;
  }
  fs::create_directories(c.output_dir);
  return c;
}

void error_line(std::ostream& err, const std::string& kind, const std::string& message) {
  err << json{{"error", kind}, {"message", message}}.dump() << '\n';
}

std::string checkpoint_name(std::size_t round) {
  std::string digits = std::to_string(round);
  return "round_" + std::string(digits.size() < 5 ? 5 - digits.size() : 0, '0') + digits;
}

int cmd_run(const Options& o, std::ostream& out) {
  const ExperimentConfig c = load(o);
  const fs::path dir = c.output_dir;
  MetricsSink sink(dir / "smartfreeze.metrics.jsonl", "smartfreeze", c.seed);
  RunHooks hooks;
  hooks.on_round = [&](const RoundRecord& r) { sink.round(r); };
  hooks.on_stage = [&](const StageSummary& s) { sink.stage(s); };
  if (!o.checkpoints.empty()) {
    fs::create_directories(o.checkpoints);
    hooks.on_model = [&](std::size_t round, const Network& net) {
      save_checkpoint(fs::path(o.checkpoints) / checkpoint_name(round), net);
    };
  }
  const ExperimentReport report = run_experiment(c, hooks);
  sink.communities(report.communities);
  write_summary(dir / "smartfreeze.summary.json", report);
  save_checkpoint(dir / "smartfreeze.final", report.final_model);
  out << json{{"kind", report.kind},
              {"completed", report.completed},
              {"rounds", report.rounds.size()},
              {"final_accuracy", report.final_accuracy},
              {"total_seconds", report.total_seconds}}
             .dump()
      << '\n';
  if (!report.completed) throw InfeasibleStageError(report.error, 0, 0);
  return 0;
}

int cmd_baseline(const Options& o, std::ostream& out) {
  const ExperimentConfig c = load(o);
  const BaselineKind kind = baseline_kind_from_string(o.kind);
  const fs::path dir = c.output_dir;
  const std::string name = to_string(kind);
  MetricsSink sink(dir / (name + ".metrics.jsonl"), name, c.seed);
  RunHooks hooks;
  hooks.on_round = [&](const RoundRecord& r) { sink.round(r); };
  if (!o.checkpoints.empty()) {
    fs::create_directories(o.checkpoints);
    hooks.on_model = [&](std::size_t round, const Network& net) {
      save_checkpoint(fs::path(o.checkpoints) / checkpoint_name(round), net);
    };
  }
  const ExperimentReport report = run_baseline(kind, c, hooks);
  if (report.memory_wall) sink.line(json{{"type", "memory_wall"}, {"message", report.error}}.dump());
  write_summary(dir / (name + ".summary.json"), report);
  out << json{{"kind", report.kind},
              {"completed", report.completed},
              {"memory_wall", report.memory_wall},
              {"rounds", report.rounds.size()},
              {"final_accuracy", report.final_accuracy},
              {"total_seconds", report.total_seconds}}
             .dump()
      << '\n';
  return 0;
}

Network reference_model(const ExperimentConfig& c, const Simulation& sim) {
  const Network init = build_model(c.model, derive_seed(c.seed, {0x4ef}));
  return train_centralized(init, sim.train, c.analysis.reference_epochs, c.training.batch_size,
                           c.training.sgd, derive_seed(c.seed, {0x4ef, 1}));
}

int cmd_train_reference(const Options& o, std::ostream& out) {
  const ExperimentConfig c = load(o);
  const Simulation sim = build_simulation(c);
  const Network ref = reference_model(c, sim);
  const fs::path base = fs::path(c.output_dir) / "reference";
  save_checkpoint(base, ref);
  out << json{{"checkpoint", base.string()}, {"test_accuracy", evaluate_accuracy(ref, sim.test)}}.dump()
      << '\n';
  return 0;
}

std::vector<std::size_t> cka_layers(const ExperimentConfig& c, const Network& model) {
  if (!c.analysis.layers.empty()) return c.analysis.layers;
  std::vector<std::size_t> layers;
  const std::size_t body = head_start(model.layers);
  for (std::size_t i = 0; i < body; ++i) {
    if (model.layers[i].spec.has_parameters()) layers.push_back(i);
  }
  return layers;
}

int cmd_analyze_cka(const Options& o, std::ostream& out) {
  const ExperimentConfig c = load(o);
  const Simulation sim = build_simulation(c);
  const Network reference = o.reference.empty() ? reference_model(c, sim) : load_checkpoint(o.reference);
  std::vector<std::size_t> probe_rows(std::min(c.analysis.probe_samples, sim.test.size()));
  std::iota(probe_rows.begin(), probe_rows.end(), 0);
  CkaTracker tracker(reference, sim.test.gather(probe_rows).inputs, cka_layers(c, reference));

  const fs::path dir = c.output_dir;
  MetricsSink sink(dir / "cka.metrics.jsonl", "cka", c.seed);
  auto observe = [&](std::size_t round, const Network& net) {
    sink.cka(round, tracker.layers(), tracker.observe(round, net));
  };
  if (!o.checkpoints.empty()) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(o.checkpoints)) {
      const std::string name = e.path().filename().string();
      if (name.starts_with("round_") && e.path().extension() == ".manifest") files.push_back(e.path());
    }
    if (files.empty()) throw InputError("no round_*.manifest checkpoints in " + o.checkpoints);
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const std::string stem = f.stem().string();
      observe(std::stoull(stem.substr(6)), load_checkpoint(f.parent_path() / stem));
    }
  } else {
    ExperimentConfig traced = c;
    traced.baseline.rounds = c.analysis.rounds;
    RunHooks hooks;
    hooks.on_model = observe;
    run_baseline(BaselineKind::fedavg_full, traced, hooks);
  }

  const auto stable = tracker.stabilization_rounds(c.analysis.stability_tolerance);
  json layers = json::array();
  for (std::size_t k = 0; k < tracker.layers().size(); ++k) {
    const auto s = tracker.series(k);
    layers.push_back({{"layer", tracker.layers()[k]},
                      {"stabilization_round", stable[k] ? json(*stable[k]) : json(nullptr)},
                      {"final_cka", s.empty() ? json(nullptr) : json(s.back())}});
  }
  const bool front_first = stable.size() >= 2 && stable.front() && stable.back() &&
                           *stable.front() < *stable.back();
  const json summary{{"schema", "smartfreeze-cka"},
                     {"version", kMetricsSchemaVersion},
                     {"tolerance", c.analysis.stability_tolerance},
                     {"rounds", tracker.rounds().size()},
                     {"layers", layers},
                     {"front_stabilizes_first", front_first}};
  std::ofstream(dir / "cka.summary.json", std::ios::binary | std::ios::trunc) << summary.dump(2) << '\n';
  out << json{{"front_stabilizes_first", front_first}, {"rounds", tracker.rounds().size()}}.dump() << '\n';
  return 0;
}

int cmd_export_similarity(const Options& o, std::ostream& out) {
  const ExperimentConfig c = load(o);
  const Simulation sim = build_simulation(c);
  std::vector<Batch> shards;
  for (const auto& client : sim.clients) shards.push_back(sim.train.gather(client.shard));
  const auto probes = probe_gradients(sim.initial_model, shards, c.training.batch_size, c.training.sgd,
                                      derive_seed(c.seed, {0x9b0e}), c.training.probe_epochs);
  std::vector<GradientVector> grads;
  for (const auto& g : probes) grads.push_back(g.value());
  const SimilarityMatrix omega = SimilarityMatrix::from_gradients(grads);
  const CommunitySet cs = rlcd(build_graph(omega), c.selector.hierarchy_delta, derive_seed(c.seed, {0x10a1}));

  json matrix = json::array();
  for (std::size_t i = 0; i < omega.size(); ++i) {
    json row = json::array();
    for (std::size_t j = 0; j < omega.size(); ++j) row.push_back(omega(i, j));
    matrix.push_back(row);
  }
  json clients = json::array();
  for (const auto& client : sim.clients) {
    std::vector<std::size_t> counts(sim.train.num_classes, 0);
    for (std::size_t idx : client.shard) ++counts[sim.train.labels[idx]];
    clients.push_back({{"id", client.id},
                       {"tier", client.tier},
                       {"memory_capacity", client.memory_capacity},
                       {"compute_rate", client.compute_rate},
                       {"class_counts", counts}});
  }
  const json doc{{"schema", "smartfreeze-similarity"},
                 {"version", kMetricsSchemaVersion},
                 {"clients", clients},
                 {"similarity", matrix},
                 {"communities", cs.communities},
                 {"initial_communities", cs.initial}};
  const fs::path path = fs::path(c.output_dir) / "similarity.json";
  std::ofstream(path, std::ios::binary | std::ios::trunc) << doc.dump(2) << '\n';
  out << json{{"file", path.string()}, {"communities", cs.communities.size()}}.dump() << '\n';
  return 0;
}

}  // namespace

int main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Memory-aware progressive federated training simulator", "smartfreeze"};
  app.require_subcommand(1);
  Options o;
  auto common = [&o](CLI::App* sub) {
    sub->add_option("--config", o.config, "Experiment configuration (JSON)")->required();
    sub->add_option("--seed", o.seed, "Override the master seed");
    sub->add_option("--out", o.out, "Override the output directory");
  };
  auto* run = app.add_subcommand("run", "Progressive training with memory-aware selection");
  common(run);
  run->add_option("--stage-cap", o.stage_cap, "Per-stage round cap");
  run->add_option("--checkpoints", o.checkpoints, "Save the global model after every round here");
  auto* base = app.add_subcommand("baseline", "Full-model FedAvg baselines");
  common(base);
  base->add_option("--kind", o.kind, "fedavg_full or exclusive_fl");
  base->add_option("--rounds", o.rounds, "Number of rounds");
  base->add_option("--checkpoints", o.checkpoints, "Save the global model after every round here");
  auto* cka = app.add_subcommand("analyze-cka", "Per-layer CKA against a centrally trained reference");
  common(cka);
  cka->add_option("--reference", o.reference, "Reference checkpoint base path (trained if omitted)");
  cka->add_option("--checkpoints", o.checkpoints, "Directory of round_* checkpoints to analyse");
  cka->add_option("--rounds", o.rounds, "Rounds to trace when no checkpoints are given");
  auto* sim = app.add_subcommand("export-similarity", "Write the client similarity matrix and communities");
  common(sim);
  auto* ref = app.add_subcommand("train-reference", "Train the CKA reference model centrally");
  common(ref);

  if (args.empty() || (!args.front().starts_with("-") && !kCommands.contains(args.front()))) {
    err << app.help();
    if (!args.empty()) error_line(err, "usage", "unknown subcommand '" + args.front() + "'");
    return 2;
  }
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    error_line(err, "usage", e.what());
    return 2;
  }

  try {
    if (run->parsed()) return cmd_run(o, out);
    if (base->parsed()) return cmd_baseline(o, out);
    if (cka->parsed()) return cmd_analyze_cka(o, out);
    if (sim->parsed()) return cmd_export_similarity(o, out);
    return cmd_train_reference(o, out);
  } catch (const ConfigErrors& e) {
    err << json{{"error", "config"}, {"message", e.what()}, {"problems", e.problems()}}.dump() << '\n';
  } catch (const ConfigError& e) {
    error_line(err, "config", e.what());
  } catch (const InfeasibleStageError& e) {
    error_line(err, "infeasible", e.what());
  } catch (const InputError& e) {
    error_line(err, "input", e.what());
  } catch (const std::exception& e) {
    error_line(err, "internal", e.what());
  }
  return 1;
}

}  // namespace smartfreeze::cli
