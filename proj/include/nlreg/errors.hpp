#pragma once

#include <stdexcept>
#include <string>

namespace nlreg {

/// Operand shapes disagree (vector length vs. dictionary width, batch shapes, ...).
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A function id that is not in the registry.
class UnknownFunctionError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// NMSE requested against all-zero ground truth.
class UndefinedMetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A derivative or mean-value entry vanished where an inverse is required.
class SingularityError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Binary container or metadata that cannot be read back.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A learned solver was requested but its checkpoint is not on disk.
class MissingCheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace nlreg
