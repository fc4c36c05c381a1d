// SPDX-License-Identifier: Apache-2.0
#include "smartfreeze/pace.hpp"

#include <algorithm>
#include <cmath>

#include "smartfreeze/error.hpp"

namespace smartfreeze {

double block_perturbation(std::span<const std::vector<double>> snapshots,
                          std::size_t window) {
  if (window == 0) throw ContractError("perturbation window must be >= 1");
  if (snapshots.size() < window + 1) {
    throw ContractError("perturbation needs " + std::to_string(window + 1) +
                        " snapshots, have " + std::to_string(snapshots.size()));
  }
  const auto recent = snapshots.last(window + 1);
  const std::size_t n = recent.front().size();
  for (const auto& s : recent) {
    if (s.size() != n) throw ContractError("snapshot lengths differ");
  }
  std::vector<double> sum(n, 0.0);
  double norm_sum = 0.0;
  for (std::size_t q = 1; q <= window; ++q) {
    const auto& cur = recent[q];
    const auto& prev = recent[q - 1];
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double u = cur[i] - prev[i];
      sum[i] += u;
      sq += u * u;
    }
    norm_sum += std::sqrt(sq);
  }
  if (norm_sum == 0.0) return 0.0;
  double sq = 0.0;
  for (double v : sum) sq += v * v;
  return std::sqrt(sq) / norm_sum;
}

double smooth(std::span<const double> series, std::size_t window, std::size_t r) {
  if (series.empty() || r == 0) throw ContractError("smooth of an empty series");
  if (window == 0) throw ContractError("smoothing window must be >= 1");
  r = std::min(r, series.size());
  const std::size_t begin = r >= window ? r - window : 0;
  double sum = 0.0;
  for (std::size_t i = begin; i < r; ++i) sum += series[i];
  return sum / static_cast<double>(r - begin);
}

double fit_slope(std::span<const double> points) {
  const std::size_t k = points.size();
  if (k < 2) throw ContractError("slope fit needs at least 2 points");
  const double x_mean = static_cast<double>(k - 1) / 2.0;
  double y_mean = 0.0;
  for (double y : points) y_mean += y;
  y_mean /= static_cast<double>(k);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double dx = static_cast<double>(i) - x_mean;
    sxy += dx * (points[i] - y_mean);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

bool freeze_decision(PerturbationTrace& trace, double slope, double threshold,
                     std::size_t patience) {
  trace.slopes.push_back(slope);
  if (std::abs(slope) <= std::abs(threshold)) {
    ++trace.below_count;
  } else {
    trace.below_count = 0;
  }
  if (trace.below_count >= patience) {
    trace.below_count = 0;
    return true;
  }
  return false;
}

PaceController::PaceController(PaceConfig config) : config_(config) {
  if (config_.window == 0 || config_.smoothing == 0 || config_.patience == 0) {
    throw ConfigError("pace window, smoothing and patience must be >= 1");
  }
}

void PaceController::reset(std::vector<double> initial_block) {
  trace_ = PerturbationTrace{};
  trace_.snapshots.push_back(std::move(initial_block));
}

PaceStep PaceController::observe(std::vector<double> block) {
  PaceStep step;
  trace_.snapshots.push_back(std::move(block));
  while (trace_.snapshots.size() > config_.window + 1) trace_.snapshots.pop_front();
  if (trace_.snapshots.size() < config_.window + 1) return step;

  const std::vector<std::vector<double>> snaps(trace_.snapshots.begin(),
                                               trace_.snapshots.end());
  step.perturbation = block_perturbation(snaps, config_.window);
  trace_.perturbation.push_back(*step.perturbation);
  step.smoothed = smooth(trace_.perturbation, config_.smoothing,
                         trace_.perturbation.size());
  trace_.smoothed.push_back(*step.smoothed);

  const std::size_t fit_len = std::max<std::size_t>(2, config_.smoothing);
  if (trace_.smoothed.size() < fit_len) return step;
  step.slope = fit_slope(std::span<const double>(trace_.smoothed).last(fit_len));
  step.freeze = freeze_decision(trace_, *step.slope, config_.slope_threshold,
                                config_.patience);
  return step;
}

}  // namespace smartfreeze
