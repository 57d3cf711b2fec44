#pragma once

#include <stdexcept>
#include <string>

namespace tsgan {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller violated a documented precondition (bad argument, wrong label, ...).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Tensor shapes do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A configuration key, value or column selector is invalid.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Text input (CSV, config) could not be parsed.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Binary input (signal stream, checkpoint) is malformed.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failure; the message carries the offending path.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace tsgan
