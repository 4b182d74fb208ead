#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sgp {

// All library failures derive from Error so callers can map them to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class CalibrationError : public Error {
 public:
  using Error::Error;
};

class ChecksumError : public DataError {
 public:
  using DataError::DataError;
};

/// Rule text could not be parsed. `position` is a 0-based character offset.
class RuleSyntaxError : public Error {
 public:
  RuleSyntaxError(const std::string& what, std::size_t position)
      : Error(what + " at position " + std::to_string(position)), position_(position) {}
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

class UnknownVariableError : public RuleSyntaxError {
 public:
  using RuleSyntaxError::RuleSyntaxError;
};

class EmptyRuleError : public Error {
 public:
  using Error::Error;
};

inline void require_shape(bool ok, const char* what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace sgp
