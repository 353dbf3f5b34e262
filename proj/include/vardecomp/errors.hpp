#pragma once

#include <stdexcept>
#include <string>

namespace vardecomp {

// Invalid or inconsistent input data (bad file, broken invariant, dimension
// mismatch). CLI maps this to exit code 3.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// An iterative fit failed to converge or the likelihood is degenerate
// (e.g. complete separation). CLI maps this to exit code 4.
struct ConvergenceError : std::runtime_error {
  explicit ConvergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace vardecomp
