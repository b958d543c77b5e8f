#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace hpbm {

/// Input that violates a documented precondition (dimensions, bounds, counts).
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A kernel system could not be factorized, even after the jitter ladder.
class FitError : public std::runtime_error {
 public:
  FitError(const std::string& what, std::vector<double> attempted_jitter = {})
      : std::runtime_error(what), attempted_jitter_(std::move(attempted_jitter)) {}

  /// Absolute jitter values tried, in order, before giving up.
  const std::vector<double>& attempted_jitter() const noexcept { return attempted_jitter_; }

 private:
  std::vector<double> attempted_jitter_;
};

/// Gradient-based optimization produced a non-finite objective it could not recover from.
class OptimizerError : public std::runtime_error {
 public:
  OptimizerError(const std::string& what, std::vector<double> trace)
      : std::runtime_error(what), trace_(std::move(trace)) {}

  /// Objective values at accepted iterates up to the failure.
  const std::vector<double>& trace() const noexcept { return trace_; }

 private:
  std::vector<double> trace_;
};

/// Malformed data file. `line` is 1-based; 0 when the problem is not tied to a line.
class DataError : public std::runtime_error {
 public:
  DataError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Pipeline failure tagged with the stage and fold that raised it.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, int fold, const std::string& what)
      : std::runtime_error(what), stage_(std::move(stage)), fold_(fold) {}

  const std::string& stage() const noexcept { return stage_; }
  /// Held-out year index, or -1 outside fold processing.
  int fold() const noexcept { return fold_; }

 private:
  std::string stage_;
  int fold_;
};

}  // namespace hpbm
