#pragma once

#include <stdexcept>
#include <string>

namespace vimprint {

/// Base class for all library errors. `category()` is the machine-readable
/// tag the CLI reports alongside the exit status.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* category() const noexcept = 0;
};

/// Input violates an operation's mathematical precondition.
class DomainError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "domain"; }
};

/// Invalid configuration or parameters (bad sizes, rank deficiency, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "config"; }
};

/// Divergence or non-finite values during an iterative fit.
class NumericalError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "numerical"; }
};

class IoError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "io"; }
};

enum class ParseFailure {
  kBadMagic,
  kBadVersion,
  kShapeOverflow,
  kTruncated,
  kTrailingBytes,
  kMalformed,
};

/// Binary or text artifact could not be decoded.
class ParseError : public Error {
 public:
  ParseError(ParseFailure kind, const std::string& what) : Error(what), kind_(kind) {}
  const char* category() const noexcept override { return "parse"; }
  ParseFailure kind() const noexcept { return kind_; }

 private:
  ParseFailure kind_;
};

}  // namespace vimprint
