#pragma once

#include <stdexcept>
#include <string>

namespace divlab {

// Error taxonomy shared across the library. The CLI maps these onto exit codes
// (config -> 2, missing dependency -> 3, numeric divergence -> 4).
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Operand shapes incompatible with the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Caller violated an operation precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid specification or configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or truncated on-disk artifact.
class FormatError : public Error {
 public:
  using Error::Error;
};

// A required input artifact (probe, dataset, checkpoint) is absent.
class MissingInputError : public Error {
 public:
  using Error::Error;
};

// Non-finite values or failure to converge during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace divlab
