#pragma once

#include <stdexcept>
#include <string>

namespace cppap {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or axis disagreement between operands.
struct DimensionError : Error {
  using Error::Error;
};

// NaN/Inf encountered in a forward or backward pass.
struct NumericError : Error {
  using Error::Error;
};

// Bad user-supplied data (manifest rows, PIQ answers, labels).
struct ValidationError : Error {
  using Error::Error;
};

// Corrupt or mismatched on-disk artifact (checkpoints, WAV, images).
struct FormatError : Error {
  using Error::Error;
};

// Inconsistent or missing run configuration.
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace cppap
