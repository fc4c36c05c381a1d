// SPDX-License-Identifier: Apache-2.0
#include "smartfreeze/selector.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "smartfreeze/cost_model.hpp"
#include "smartfreeze/error.hpp"

namespace smartfreeze {

double data_importance(const Network& model, const Batch& shard, std::size_t eval_batch) {
  const std::size_t n = shard.size();
  if (n == 0) return 0.0;
  const std::size_t per = shard.inputs.size() / n;
  double total = 0.0;
  for (std::size_t start = 0; start < n; start += eval_batch) {
    const std::size_t end = std::min(n, start + eval_batch);
    Shape shape = shard.inputs.shape();
    shape[0] = end - start;
    Tensor x(shape, std::vector<double>(shard.inputs.data() + start * per,
                                        shard.inputs.data() + end * per));
    const auto acts = forward(model, x);
    for (double l : sample_losses(acts.back(), std::span(shard.labels).subspan(start, end - start))) {
      total += l;
    }
  }
  return total;
}

double diversity(std::span<const std::size_t> cohort, const SimilarityMatrix& omega, double floor) {
  if (cohort.size() < 2) throw ContractError("diversity needs at least 2 clients");
  double sum = 0.0;
  for (std::size_t a = 0; a < cohort.size(); ++a) {
    for (std::size_t b = a + 1; b < cohort.size(); ++b) sum += omega(cohort[a], cohort[b]);
  }
  return 1.0 / std::max(floor, sum);
}

std::vector<std::size_t> eligible(std::span<const std::uint64_t> capacities,
                                  std::uint64_t required_bytes, std::size_t min_eligible) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < capacities.size(); ++i) {
    if (capacities[i] >= required_bytes) out.push_back(i);
  }
  if (out.size() < min_eligible) {
    throw InfeasibleStageError(
        "infeasible stage: " + std::to_string(out.size()) +
            " clients have the " + std::to_string(required_bytes) +
            " bytes required, at least " + std::to_string(min_eligible) + " needed (shortfall " +
            std::to_string(min_eligible - out.size()) + ")",
        out.size(), min_eligible);
  }
  return out;
}

Selection select(const CommunitySet& communities, std::span<const double> utility,
                 const SelectionConstraints& constraints,
                 std::span<const std::size_t> eligible_clients,
                 std::span<const std::size_t> data_sizes, Rng& rng) {
  const std::size_t size = constraints.cohort_size;
  if (size == 0) throw ContractError("cohort size must be >= 1");
  if (constraints.epsilon < 0.0 || constraints.epsilon > 1.0) {
    throw ContractError("epsilon outside [0, 1]");
  }
  if (eligible_clients.size() < size) {
    throw SelectionError("cannot select " + std::to_string(size) + " clients from " +
                         std::to_string(eligible_clients.size()) + " eligible");
  }
  const std::set<std::size_t> pool(eligible_clients.begin(), eligible_clients.end());
  std::set<std::size_t> taken;
  Selection sel;

  // ceil((1 - eps) * |S|), guarded against 0.9 * 10 = 9.000000000000002.
  const auto exploit_target = std::min<std::size_t>(
      size, static_cast<std::size_t>(std::ceil((1.0 - constraints.epsilon) * size - 1e-9)));

  bool progress = true;
  while (sel.exploited.size() < exploit_target && progress) {
    progress = false;
    for (const auto& community : communities.communities) {
      if (sel.exploited.size() >= exploit_target) break;
      std::optional<std::size_t> best;
      for (auto c : community) {
        if (!pool.count(c) || taken.count(c)) continue;
        if (!best || utility[c] > utility[*best]) best = c;  // ascending ids: ties keep the lower
      }
      if (!best) continue;
      sel.exploited.push_back(*best);
      taken.insert(*best);
      progress = true;
    }
  }

  std::vector<std::size_t> rest;
  for (auto c : pool) {
    if (!taken.count(c)) rest.push_back(c);
  }
  while (taken.size() < size) {
    const std::size_t pick = uniform_index(rng, rest.size());
    sel.explored.push_back(rest[pick]);
    taken.insert(rest[pick]);
    rest.erase(rest.begin() + static_cast<std::ptrdiff_t>(pick));
  }

  sel.clients.assign(taken.begin(), taken.end());
  auto total = [&] {
    std::uint64_t t = 0;
    for (auto c : sel.clients) t += data_sizes[c];
    return t;
  };
  sel.total_data = total();
  while (sel.total_data < constraints.min_total_data) {
    auto largest = std::max_element(rest.begin(), rest.end(), [&](auto a, auto b) {
      return data_sizes[a] < data_sizes[b];
    });
    auto smallest = std::min_element(sel.clients.begin(), sel.clients.end(), [&](auto a, auto b) {
      return data_sizes[a] < data_sizes[b];
    });
    if (largest == rest.end() || data_sizes[*largest] <= data_sizes[*smallest]) {
      sel.constraint_failure = "selected data " + std::to_string(sel.total_data) +
                               " below minimum " + std::to_string(constraints.min_total_data);
      break;
    }
    std::swap(*largest, *smallest);
    std::sort(sel.clients.begin(), sel.clients.end());
    std::sort(rest.begin(), rest.end());
    sel.total_data = total();
  }
  return sel;
}

double objective(std::span<const std::size_t> cohort, const SimilarityMatrix& omega,
                 std::span<const double> importance, std::span<const double> times,
                 double lambda, double floor) {
  double sum_importance = 0.0;
  std::vector<double> cohort_times;
  for (auto c : cohort) {
    sum_importance += importance[c];
    cohort_times.push_back(times[c]);
  }
  const double div = cohort.size() >= 2 ? diversity(cohort, omega, floor) : 0.0;
  return div + sum_importance - lambda * round_time(cohort_times);
}

}  // namespace smartfreeze
