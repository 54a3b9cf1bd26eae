#pragma once

#include <stdexcept>
#include <string>

namespace gaitstage {

// Unreadable, unparseable, or missing input (CLI exit code 2).
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Well-formed input that violates an operation precondition (CLI exit code 3).
struct PreconditionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss (CLI exit code 4).
struct DivergenceError : std::runtime_error {
  DivergenceError(const std::string& msg, std::size_t epoch, std::size_t batch)
      : std::runtime_error(msg), epoch(epoch), batch(batch) {}
  std::size_t epoch;
  std::size_t batch;
};

}  // namespace gaitstage
