#pragma once

#include <stdexcept>
#include <string>

namespace tvio {

/// Bad argument values or malformed configuration.
struct InvalidInput : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Geometry that cannot support the requested construction
/// (zero baseline, rank-deficient projection, degenerate transfer).
struct DegenerateGeometry : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Linear-algebra failure that survived reconditioning.
struct NumericalFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed input file; the message carries file and line context.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace tvio
