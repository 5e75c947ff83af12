#pragma once

#include <stdexcept>
#include <string>

namespace dho2 {

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A replicated value (seed, tridiagonal matrix, ...) differs across workers.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A collective round was never completed: some rank did not show up.
struct DeadlockError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace dho2
