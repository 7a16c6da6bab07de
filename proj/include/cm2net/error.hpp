#pragma once

#include <stdexcept>
#include <string>

namespace cm2 {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Input outside an operation's mathematical domain, e.g. log of a non-positive value.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Input for which the operation is undefined, e.g. normalizing a zero vector.
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// A forward operation produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Misuse of a gradient tape (stale tape, non-scalar root, foreign variable).
class TapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed or incompatible file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace cm2
