#pragma once

#include <stdexcept>
#include <string>

namespace diffinfo {

/// Thrown when a computation leaves the numerically valid regime:
/// singular covariance, diverged training, non-finite sampler state.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

}  // namespace diffinfo
