#pragma once

#include <stdexcept>
#include <string>

namespace nplab {

/// Operand shapes do not conform for an operation.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A model or kernel parameter is outside its admissible range.
struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Factorisation failure, non-finite values, or a singular system.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A computation would exceed a configured memory budget.
struct ResourceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace nplab
