#ifndef CLC_ERRORS_HPP_
#define CLC_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace clc {

// Base class for everything thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dimension mismatch between operands (matmul, add, ...).
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Input is mathematically unusable (zero-norm row fed to a normalizer, ...).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value (tau <= 0, t > tau, epsilon <= 0, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// API misuse: non-scalar loss passed to backward, empty metric input, ...
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed text input (CSV, config file), message names the offending line.
class ParseError : public Error {
 public:
  using Error::Error;
};

// File-level failure: missing file, bad magic, version mismatch, truncation.
class IoError : public Error {
 public:
  using Error::Error;
};

// A NaN or Inf escaped a numeric operation or the training loss.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

// Internal invariant violated; indicates a bug in this library.
class InternalError : public Error {
 public:
  using Error::Error;
};

}  // namespace clc

#endif  // CLC_ERRORS_HPP_
