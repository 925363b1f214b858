#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace emdiff {

struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

/// Linear-algebra failures and numerical underflow in the oracles.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A chain, training run or EM iteration produced non-finite values.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, std::size_t step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"), detail_(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }
  /// The message without the step suffix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string detail_;
  std::size_t step_;
};

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace emdiff
