#pragma once

#include <stdexcept>
#include <string>

namespace dklrom {

/// Bad shapes, out-of-range values, non-finite inputs.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Factorisation or integration breakdown.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or incompatible files on disk.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inconsistent run configuration (H+T > N, unstable time step, ...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace dklrom
