// SPDX-License-Identifier: Apache-2.0
//
// Convergence detection for the block under training, driven only by the
// history of aggregated block parameters.
#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <span>
#include <vector>

namespace smartfreeze {

struct PaceConfig {
  std::size_t window = 5;           // Q: updates per perturbation value
  std::size_t smoothing = 5;        // H: moving-average width, also the slope fit length
  double slope_threshold = 1e-3;    // Lambda
  std::size_t patience = 3;         // mu: consecutive flat slopes before freezing
  std::size_t stage_round_cap = 200;

  friend bool operator==(const PaceConfig&, const PaceConfig&) = default;
};

// ||sum of the last Q updates|| / sum of their norms, from the last Q+1
// snapshots. Zero when every update is zero.
double block_perturbation(std::span<const std::vector<double>> snapshots,
                          std::size_t window);

// Mean of values [r-H, r) when r >= H, else of the first r values.
double smooth(std::span<const double> series, std::size_t window, std::size_t r);

// Least-squares slope of points over x = 0..K-1.
double fit_slope(std::span<const double> points);

struct PerturbationTrace {
  std::deque<std::vector<double>> snapshots;  // at most Q+1
  std::vector<double> perturbation;
  std::vector<double> smoothed;
  std::vector<double> slopes;
  std::size_t below_count = 0;
};

// Records `slope`, updates the consecutive-below counter and reports whether
// it reached `patience` (resetting it if so).
bool freeze_decision(PerturbationTrace& trace, double slope, double threshold,
                     std::size_t patience);

struct PaceStep {
  std::optional<double> perturbation;
  std::optional<double> smoothed;
  std::optional<double> slope;
  bool freeze = false;
};

class PaceController {
 public:
  explicit PaceController(PaceConfig config);

  // Starts a new stage from the block's initial parameters.
  void reset(std::vector<double> initial_block);
  // Feeds the block parameters after one aggregation round.
  PaceStep observe(std::vector<double> block);

  const PerturbationTrace& trace() const noexcept { return trace_; }
  const PaceConfig& config() const noexcept { return config_; }

 private:
  PaceConfig config_;
  PerturbationTrace trace_;
};

}  // namespace smartfreeze
