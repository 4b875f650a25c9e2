#pragma once

#include <stdexcept>
#include <string>

namespace cinn {

// Error classes map onto CLI exit codes (see tools/cinn_main.cpp).
enum class ErrorKind {
  kInput = 2,        // missing files, malformed CSV, bad config
  kData = 3,         // degenerate data (constant columns, unseen categories)
  kGraph = 4,        // cycles, bad edits, invalid partitions
  kConvergence = 5,  // discovery did not reach the acyclicity tolerance
  kNumeric = 6,      // non-finite losses, divergence
  kShape = 7,        // dimension / arity mismatches
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

}  // namespace cinn
