#pragma once

#include <stdexcept>
#include <string>

namespace elr {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or extent mismatch between operands.
struct DimensionError : Error {
  using Error::Error;
};

struct IndexError : Error {
  using Error::Error;
};

// A documented precondition of an operation was violated.
struct ContractError : Error {
  using Error::Error;
};

// Zero-norm tensors where a normalization needs a direction (collapse).
struct DegenerateError : Error {
  using Error::Error;
};

// Closed form evaluated outside the region where it holds.
struct DomainError : Error {
  using Error::Error;
};

struct FormatError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

// Non-finite loss during training.
struct DivergenceError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace elr
