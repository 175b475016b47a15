#pragma once

#include <stdexcept>
#include <string>

namespace treatrl {

// Malformed or invariant-violating input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A numerical procedure failed (non-convergence, singular system).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace treatrl
