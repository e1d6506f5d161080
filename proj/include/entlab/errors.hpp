#pragma once

#include <stdexcept>
#include <string>

namespace entlab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A value lies outside an operation's mathematical domain (log of a
/// non-positive number, non-positive temperature, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent architecture, optimizer or cost-model settings.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// The caller used an API incorrectly (non-scalar loss, empty corpus, ...).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Malformed input data (token out of range, negative probabilities, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// A checkpoint could not be loaded.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace entlab
