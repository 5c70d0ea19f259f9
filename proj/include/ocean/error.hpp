#pragma once

#include <stdexcept>
#include <string>

namespace ocean {

// Base class for every error raised by the library. Each subclass maps to a
// distinct failure category so callers (the CLI in particular) can translate
// them into exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes that do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced by a forward op, or a divergent loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

// API misuse: out-of-range indices, non-scalar backward roots, bad arguments.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Inputs that are well-formed but carry no usable signal (zero-area boxes,
// empty sample masks).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

// Invalid or unknown configuration keys and values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Unreadable or mismatched files: weights, logs, sequences.
class ArtifactError : public Error {
 public:
  using Error::Error;
};

// Prediction or ground-truth logs that are missing, malformed or disagree
// in length.
class IngestionError : public Error {
 public:
  using Error::Error;
};

}  // namespace ocean
