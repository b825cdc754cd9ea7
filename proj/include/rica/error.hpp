#pragma once

#include <stdexcept>
#include <string>

namespace rica {

// Base of every error raised by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes or mismatched lengths.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Value outside the domain of a function, e.g. log of a non-positive number.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Caller broke a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration, rubric spec, or run config.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents or I/O failure on data files.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Data that is well-formed but semantically invalid.
class DataError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced during computation or training.
class NumericalFault : public Error {
 public:
  using Error::Error;
};

}  // namespace rica
