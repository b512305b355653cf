#pragma once

#include <stdexcept>
#include <string>

namespace jdapt {

/// Base class for every error raised by the library.
///
/// Errors split into two families that the CLI maps onto exit codes:
/// validation problems (bad input, bad config, bad shapes) and runtime
/// problems (numerical failure, corrupt artifacts, I/O).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual bool is_validation() const { return false; }
};

class ValidationError : public Error {
 public:
  using Error::Error;
  bool is_validation() const override { return true; }
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ParseError : public ValidationError {
 public:
  ParseError(const std::string& msg, std::size_t line)
      : ValidationError("line " + std::to_string(line) + ": " + msg), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class DegenerateSampleError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class BalanceError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class SingularityError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class CorruptionError : public Error {
 public:
  using Error::Error;
};

class IncompatibleVersionError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace jdapt
