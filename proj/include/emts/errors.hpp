#pragma once

#include <stdexcept>
#include <string>

namespace emts {

/// Invalid or inconsistent configuration, or a missing input artifact.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A training run produced a non-finite loss or otherwise had to stop.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace emts
