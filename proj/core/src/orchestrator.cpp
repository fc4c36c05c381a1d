// SPDX-License-Identifier: Apache-2.0
#include "smartfreeze/orchestrator.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <numeric>
#include <thread>

#include "smartfreeze/error.hpp"
#include "smartfreeze/pace.hpp"
#include "smartfreeze/rng.hpp"
#include "smartfreeze/selector.hpp"

namespace smartfreeze {

namespace {

constexpr std::uint64_t kTrainStream = 0x10c;
constexpr std::uint64_t kSelectStream = 0x5e1;
constexpr std::uint64_t kBaselineStream = 0xba5e;

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  const std::size_t per = x.size() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = rows.size();
  Tensor out(shape);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    std::copy_n(x.data() + rows[k] * per, per, out.data() + k * per);
  }
  return out;
}

std::size_t first_trainable(const Network& net) {
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    if (net.layers[i].spec.trainable) return i;
  }
  throw ContractError("network has no trainable layer");
}

// Runs fn(i) for i in [0, n) across hardware threads; results keep index order.
template <class Fn>
auto parallel_map(std::size_t n, Fn fn) {
  using R = decltype(fn(std::size_t{0}));
  std::vector<R> out(n);
  const std::size_t threads =
      std::min<std::size_t>(n, std::max(1u, std::thread::hardware_concurrency()));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
    return out;
  }
  std::vector<std::future<void>> jobs;
  for (std::size_t t = 0; t < threads; ++t) {
    jobs.push_back(std::async(std::launch::async, [&, t] {
      for (std::size_t i = t; i < n; i += threads) out[i] = fn(i);
    }));
  }
  for (auto& j : jobs) j.get();
  return out;
}

std::vector<Batch> client_batches(const Simulation& sim) {
  std::vector<Batch> out;
  out.reserve(sim.clients.size());
  for (const auto& c : sim.clients) out.push_back(sim.train.gather(c.shard));
  return out;
}

std::vector<std::uint64_t> capacities(const Simulation& sim) {
  std::vector<std::uint64_t> caps;
  for (const auto& c : sim.clients) caps.push_back(c.memory_capacity);
  return caps;
}

double weighted_loss(const std::vector<LocalUpdate>& updates) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& u : updates) {
    sum += u.loss * static_cast<double>(u.samples);
    n += u.samples;
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

}  // namespace

Simulation build_simulation(const ExperimentConfig& config) {
  Simulation sim;
  sim.config = config;
  auto data = make_synthetic(synthetic_spec(config), config.seed);
  sim.train = std::move(data.train);
  sim.test = std::move(data.test);
  const std::size_t n = config.fleet.num_clients;
  auto shards = partition_dirichlet(sim.train.labels, sim.train.num_classes, n,
                                    config.fleet.alpha, derive_seed(config.seed, {0x5a4d}));

  // Largest-remainder tier counts, then a seeded shuffle of the assignment.
  const auto& tiers = config.fleet.memory_tiers;
  if (tiers.empty()) throw ConfigError("fleet.memory_tiers: at least one tier required");
  std::vector<std::size_t> counts(tiers.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < tiers.size(); ++k) {
    const double exact = tiers[k].proportion * static_cast<double>(n);
    counts[k] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[k];
    remainders.emplace_back(exact - std::floor(exact), k);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++counts[remainders[i % tiers.size()].second];
  std::vector<std::size_t> tier_of;
  for (std::size_t k = 0; k < tiers.size(); ++k) tier_of.insert(tier_of.end(), counts[k], k);
  Rng rng(derive_seed(config.seed, {0x7135}));
  for (std::size_t i = tier_of.size(); i > 1; --i) std::swap(tier_of[i - 1], tier_of[uniform_index(rng, i)]);

  for (std::size_t i = 0; i < n; ++i) {
    ClientProfile c;
    c.id = i;
    c.tier = tiers[tier_of[i]].name;
    c.memory_capacity = tiers[tier_of[i]].capacity_bytes;
    c.compute_rate = config.fleet.compute_min +
                     (config.fleet.compute_max - config.fleet.compute_min) * uniform01(rng);
    c.shard = std::move(shards[i]);
    sim.clients.push_back(std::move(c));
  }
  sim.initial_model = build_model(config.model, config.seed);
  sim.partition = partition_model(sim.initial_model, config.model.boundaries);
  return sim;
}

LocalUpdate local_train(const Network& model, const Batch& shard,
                        std::size_t epochs, std::size_t batch_size,
                        const SgdConfig& sgd, std::uint64_t seed) {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (shard.size() == 0) throw ContractError("local_train on an empty shard");
  const std::size_t p = first_trainable(model);
  const std::size_t L = model.layers.size();

  // Frozen layers never change during local training, so their outputs are
  // computed once and the trainable suffix is trained on them directly.
  Tensor x = shard.inputs;
  Network suffix{model.input_shape, {model.layers.begin() + static_cast<std::ptrdiff_t>(p), model.layers.end()}};
  if (p > 0) {
    Network prefix{model.input_shape, {model.layers.begin(), model.layers.begin() + static_cast<std::ptrdiff_t>(p)}};
    x = forward(prefix, x).back();
    suffix.input_shape.assign(x.shape().begin() + 1, x.shape().end());
  }

  LocalUpdate u;
  u.samples = shard.size();
  if (epochs == 0) {
    u.loss = loss_ce(forward(suffix, x).back(), shard.labels);
    u.params = flatten_parameters(model, p, L);
    return u;
  }
  const auto mask = suffix.trainable_mask();
  auto opt = make_optimizer(suffix, sgd);
  Rng rng(seed);
  std::vector<std::size_t> rows(shard.size());
  std::vector<std::size_t> labels;
  for (std::size_t e = 0; e < epochs; ++e) {
    std::iota(rows.begin(), rows.end(), 0);
    for (std::size_t i = rows.size(); i > 1; --i) std::swap(rows[i - 1], rows[uniform_index(rng, i)]);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < rows.size(); start += batch_size) {
      const std::size_t end = std::min(rows.size(), start + batch_size);
      const std::span<const std::size_t> idx(rows.data() + start, end - start);
      const Tensor xb = gather_rows(x, idx);
      labels.clear();
      for (std::size_t r : idx) labels.push_back(shard.labels[r]);
      const auto acts = forward(suffix, xb);
      loss_sum += loss_ce(acts.back(), labels) * static_cast<double>(idx.size());
      const auto grads = backward(suffix, xb, acts, labels, mask);
      sgd_step(suffix, grads, opt);
    }
    u.loss = loss_sum / static_cast<double>(rows.size());
  }
  u.params = flatten_parameters(suffix, 0, suffix.layers.size());
  return u;
}

std::vector<double> aggregate(std::span<const std::vector<double>> params,
                              std::span<const double> weights) {
  if (params.empty()) throw ContractError("aggregate needs at least one update");
  if (params.size() != weights.size()) throw ContractError("aggregate: one weight per update required");
  double total = 0.0;
  for (double w : weights) {
    if (!(w > 0.0)) throw ContractError("aggregate: weights must be positive");
    total += w;
  }
  const std::size_t n = params.front().size();
  std::vector<double> out(n, 0.0);
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].size() != n) {
      throw ContractError("aggregate: update " + std::to_string(k) + " has " +
                          std::to_string(params[k].size()) + " values, expected " +
                          std::to_string(n));
    }
    const double share = weights[k] / total;
    for (std::size_t i = 0; i < n; ++i) out[i] += share * params[k][i];
  }
  return out;
}

double evaluate_accuracy(const Network& model, const Dataset& data) {
  if (data.size() == 0) throw ContractError("evaluation on an empty dataset");
  constexpr std::size_t chunk = 256;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    idx.resize(std::min(chunk, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const Batch b = data.gather(idx);
    const Tensor logits = forward(model, b.inputs).back();
    for (std::size_t r = 0; r < b.size(); ++r) correct += argmax_row(logits, r) == b.labels[r];
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

StageSummary run_stage(StageModel& stage, StageState& state,
                       std::vector<RoundRecord>& records, const RunHooks& hooks) {
  if (state.sim == nullptr || state.communities == nullptr || state.omega == nullptr) {
    throw ContractError("run_stage: incomplete state");
  }
  const Simulation& sim = *state.sim;
  const ExperimentConfig& cfg = sim.config;
  const std::size_t t = stage.stage;
  const std::string where = "stage " + std::to_string(t);

  StageSummary summary;
  summary.stage = t;
  summary.memory = stage_memory(stage, cfg.training.batch_size);
  std::vector<std::size_t> pool;
  try {
    pool = eligible(capacities(sim), summary.memory.total(), min_eligible_clients(cfg));
  } catch (const InfeasibleStageError& e) {
    throw InfeasibleStageError(where + ": " + e.what(), e.eligible(), e.required());
  }
  summary.eligible = pool.size();
  summary.flops_per_sample = stage_flops(stage);

  const std::size_t n = sim.clients.size();
  const auto shards = client_batches(sim);
  std::vector<std::size_t> sizes(n);
  for (std::size_t i = 0; i < n; ++i) sizes[i] = shards[i].size();
  std::vector<double> importance(n, 0.0), times(n, 0.0);
  std::vector<double> util(n, -std::numeric_limits<double>::infinity());
  double mean_i = 0.0, mean_t = 0.0;
  for (std::size_t c : pool) {
    importance[c] = data_importance(stage.network, shards[c]);
    times[c] = client_time(summary.flops_per_sample, sizes[c], cfg.training.rho,
                           sim.clients[c].compute_rate, cfg.training.local_epochs);
    mean_i += importance[c];
    mean_t += times[c];
  }
  const double lambda = cfg.selector.lambda.value_or(mean_t > 0.0 ? mean_i / mean_t : 0.0);
  summary.lambda = lambda;
  for (std::size_t c : pool) util[c] = importance[c] - lambda * times[c];

  SelectionConstraints constraints;
  constraints.lambda = lambda;
  constraints.epsilon = cfg.selector.epsilon;
  constraints.min_eligible = min_eligible_clients(cfg);
  constraints.min_total_data = cfg.selector.min_total_data;
  constraints.cohort_size = std::min(cfg.selector.cohort_size, pool.size());
  summary.cohort_size = constraints.cohort_size;
  if (constraints.cohort_size < cfg.selector.cohort_size) {
    state.warnings.push_back(where + ": cohort reduced to " + std::to_string(pool.size()) +
                             " eligible clients");
  }

  const std::size_t p = stage.frozen_prefix_end();
  const std::size_t L = stage.network.layers.size();
  const LayerRange block = stage.trainable_block();
  summary.frozen_hash_entry = hash_values(flatten_parameters(stage.network, 0, p));
  PaceController pace(cfg.pace);
  pace.reset(flatten_parameters(stage.network, block.first, block.last));

  for (std::size_t r = 1; r <= cfg.pace.stage_round_cap; ++r) {
    const std::size_t round = ++state.round;
    Rng sel_rng(derive_seed(cfg.seed, {kSelectStream, round}));
    const Selection sel = select(*state.communities, util, constraints, pool, sizes, sel_rng);

    const auto updates = parallel_map(sel.clients.size(), [&](std::size_t k) {
      const std::size_t c = sel.clients[k];
      return local_train(stage.network, shards[c], cfg.training.local_epochs,
                         cfg.training.batch_size, cfg.training.sgd,
                         derive_seed(cfg.seed, {kTrainStream, round, c}));
    });
    std::vector<std::vector<double>> params;
    std::vector<double> weights;
    for (const auto& u : updates) {
      params.push_back(u.params);
      weights.push_back(static_cast<double>(u.samples));
    }
    assign_parameters(stage.network, p, L, aggregate(params, weights));

    RoundRecord rec;
    rec.round = round;
    rec.stage = t;
    rec.stage_round = r;
    rec.selected = sel.clients;
    rec.constraint_failure = sel.constraint_failure;
    rec.objective = objective(sel.clients, *state.omega, importance, times, lambda,
                              cfg.selector.diversity_floor);
    rec.train_loss = weighted_loss(updates);
    std::vector<double> selected_times;
    for (std::size_t k = 0; k < sel.clients.size(); ++k) {
      const std::size_t c = sel.clients[k];
      selected_times.push_back(times[c]);
      importance[c] = updates[k].loss * static_cast<double>(sizes[c]);
      util[c] = importance[c] - lambda * times[c];
    }
    rec.round_seconds = round_time(selected_times);
    state.clock += rec.round_seconds;
    rec.cumulative_seconds = state.clock;
    rec.memory_bytes = summary.memory.total();
    rec.test_accuracy = evaluate_accuracy(stage.network, sim.test);

    const PaceStep step = pace.observe(flatten_parameters(stage.network, block.first, block.last));
    rec.perturbation = step.perturbation;
    rec.smoothed = step.smoothed;
    rec.slope = step.slope;
    rec.freeze = hooks.freeze_override ? hooks.freeze_override(t, r) : step.freeze;

    records.push_back(rec);
    summary.rounds = r;
    if (hooks.on_round) hooks.on_round(rec);
    if (hooks.on_model) hooks.on_model(round, stage.network);
    if (rec.freeze) {
      summary.converged = true;
      break;
    }
  }
  if (!summary.converged) {
    state.warnings.push_back(where + ": reached the round cap of " +
                             std::to_string(cfg.pace.stage_round_cap) +
                             " rounds without a freeze decision");
  }
  summary.frozen_hash_exit = hash_values(flatten_parameters(stage.network, 0, p));
  return summary;
}

ExperimentReport run_experiment(const ExperimentConfig& config, const RunHooks& hooks) {
  const Simulation sim = build_simulation(config);
  ExperimentReport report;
  report.kind = "smartfreeze";
  report.full_training_bytes = full_training_memory(sim.initial_model, config.training.batch_size).total();
  for (const auto& c : sim.clients) report.eligible_full += c.memory_capacity >= report.full_training_bytes;

  const auto shards = client_batches(sim);
  const auto probes = probe_gradients(sim.initial_model, shards, config.training.batch_size,
                                      config.training.sgd, derive_seed(config.seed, {0x9b0e}),
                                      config.training.probe_epochs);
  std::vector<GradientVector> grads;
  for (const auto& g : probes) {
    if (!g) throw ContractError("client without data after partitioning");
    grads.push_back(*g);
  }
  const SimilarityMatrix omega = SimilarityMatrix::from_gradients(grads);
  report.communities = rlcd(build_graph(omega), config.selector.hierarchy_delta,
                            derive_seed(config.seed, {0x10a1}));

  const std::size_t classes = sim.initial_model.num_classes();
  const std::uint64_t op_seed = derive_seed(config.seed, {0x0e});
  const OutputModule op = build_output_module(sim.partition, 1, classes, op_seed);
  StageModel stage = assemble_stage_model(sim.partition, 1, &op);
  StageState state{&sim, &report.communities, &omega, 0, 0.0, {}};
  try {
    for (;;) {
      StageSummary s = run_stage(stage, state, report.rounds, hooks);
      report.stages.push_back(s);
      if (hooks.on_stage) hooks.on_stage(s);
      if (stage.is_final()) break;
      stage = grow(stage, sim.partition, op_seed);
    }
    report.completed = true;
  } catch (const InfeasibleStageError& e) {
    report.error = e.what();
  }
  report.warnings = std::move(state.warnings);
  report.total_seconds = state.clock;
  report.final_accuracy = evaluate_accuracy(stage.network, sim.test);
  report.final_model = std::move(stage.network);
  return report;
}

std::string to_string(BaselineKind kind) {
  return kind == BaselineKind::fedavg_full ? "fedavg_full" : "exclusive_fl";
}

BaselineKind baseline_kind_from_string(const std::string& name) {
  if (name == "fedavg_full") return BaselineKind::fedavg_full;
  if (name == "exclusive_fl") return BaselineKind::exclusive_fl;
  throw ConfigError("unknown baseline kind '" + name + "' (expected fedavg_full or exclusive_fl)");
}

ExperimentReport run_baseline(BaselineKind kind, const ExperimentConfig& config,
                              const RunHooks& hooks) {
  const Simulation sim = build_simulation(config);
  ExperimentReport report;
  report.kind = to_string(kind);
  Network net = sim.initial_model;
  for (auto& l : net.layers) l.spec.trainable = l.spec.has_parameters();
  const std::size_t L = net.layers.size();

  const MemoryBreakdown memory = full_training_memory(net, config.training.batch_size);
  report.full_training_bytes = memory.total();
  std::vector<std::size_t> candidates;
  for (const auto& c : sim.clients) {
    const bool fits = c.memory_capacity >= memory.total();
    report.eligible_full += fits;
    if (kind == BaselineKind::fedavg_full || fits) candidates.push_back(c.id);
  }
  if (candidates.empty()) {
    report.memory_wall = true;
    report.error = "memory wall: no client can hold the " + std::to_string(memory.total()) +
                   " bytes needed to train the full model";
    report.final_model = std::move(net);
    return report;
  }

  const auto shards = client_batches(sim);
  const std::uint64_t flops = full_training_flops(net);
  const std::size_t cohort = std::min(config.selector.cohort_size, candidates.size());
  if (cohort < config.selector.cohort_size) {
    report.warnings.push_back("cohort reduced to " + std::to_string(cohort) + " eligible clients");
  }
  double clock = 0.0;
  for (std::size_t round = 1; round <= config.baseline.rounds; ++round) {
    Rng rng(derive_seed(config.seed, {kBaselineStream, round}));
    std::vector<std::size_t> pool = candidates;
    for (std::size_t i = 0; i < cohort; ++i) {
      std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);
    }
    std::vector<std::size_t> chosen(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(cohort));
    std::sort(chosen.begin(), chosen.end());

    const auto updates = parallel_map(chosen.size(), [&](std::size_t k) {
      const std::size_t c = chosen[k];
      return local_train(net, shards[c], config.training.local_epochs, config.training.batch_size,
                         config.training.sgd, derive_seed(config.seed, {kTrainStream, round, c}));
    });
    std::vector<std::vector<double>> params;
    std::vector<double> weights, times;
    for (std::size_t k = 0; k < chosen.size(); ++k) {
      params.push_back(updates[k].params);
      weights.push_back(static_cast<double>(updates[k].samples));
      const auto& client = sim.clients[chosen[k]];
      times.push_back(client_time(flops, client.shard.size(), config.training.rho,
                                  client.compute_rate, config.training.local_epochs));
    }
    assign_parameters(net, 0, L, aggregate(params, weights));

    RoundRecord rec;
    rec.round = round;
    rec.stage_round = round;
    rec.selected = chosen;
    rec.train_loss = weighted_loss(updates);
    rec.round_seconds = round_time(times);
    clock += rec.round_seconds;
    rec.cumulative_seconds = clock;
    rec.memory_bytes = memory.total();
    rec.test_accuracy = evaluate_accuracy(net, sim.test);
    report.rounds.push_back(rec);
    if (hooks.on_round) hooks.on_round(rec);
    if (hooks.on_model) hooks.on_model(round, net);
  }
  report.completed = true;
  report.total_seconds = clock;
  report.final_accuracy = evaluate_accuracy(net, sim.test);
  report.final_model = std::move(net);
  return report;
}

Network train_centralized(const Network& init, const Dataset& data,
                          std::size_t epochs, std::size_t batch_size,
                          const SgdConfig& sgd, std::uint64_t seed) {
  Network net = init;
  for (auto& l : net.layers) l.spec.trainable = l.spec.has_parameters();
  const auto u = local_train(net, data.all(), epochs, batch_size, sgd, seed);
  assign_parameters(net, 0, net.layers.size(), u.params);
  return net;
}

}  // namespace smartfreeze
