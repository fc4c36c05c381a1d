// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace smartfreeze {

// Bad configuration: shapes that do not compose, invalid boundaries,
// out-of-range hyperparameters.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller broke a precondition of an operation.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Bad input data, e.g. a label outside [0, num_classes).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Cosine similarity with a zero vector, CKA on a zero-variance matrix.
class UndefinedMetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Fewer memory-eligible clients than the stage requires.
class InfeasibleStageError : public std::runtime_error {
 public:
  InfeasibleStageError(std::string message, std::size_t eligible,
                       std::size_t required)
      : std::runtime_error(std::move(message)),
        eligible_(eligible),
        required_(required) {}

  std::size_t eligible() const noexcept { return eligible_; }
  std::size_t required() const noexcept { return required_; }

 private:
  std::size_t eligible_;
  std::size_t required_;
};

// Cohort cannot be filled from the eligible pool.
class SelectionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace smartfreeze
