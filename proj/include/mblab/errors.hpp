#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mblab {

/// Base of every error the library throws. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform for a primitive.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced by a forward op, or a training loss that went non-finite.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what, long step = -1) : Error(what), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

/// Caller violated a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration (model, corpus, recipe, run config).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Object is in the wrong state for the request (e.g. adapters missing).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Malformed corpus/checkpoint file.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// Filesystem failure.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace mblab
