#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace igs {

// Violated precondition of an operation (bad parameter range, unstable input
// where a stable one is required, ...). The CLI maps these to exit code 2.
class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Shape mismatch; the message names the offending argument.
class DimensionError : public PreconditionError {
 public:
  using PreconditionError::PreconditionError;
};

// Iterative solver failed to converge.
class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite value (or guard overflow) encountered while iterating dynamics.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, std::size_t index)
      : std::runtime_error(what), index_(index) {}

  // First step index at which the state left the finite/guarded region.
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

// Non-finite objective while optimizing.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, std::size_t batch)
      : std::runtime_error(what), batch_(batch) {}
  std::size_t batch() const noexcept { return batch_; }

 private:
  std::size_t batch_;
};

}  // namespace igs
