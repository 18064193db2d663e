#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace chanopt {

// Every failure raised by the library derives from Error. The CLI maps
// NumericalError to exit code 3 and everything else to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class SingularMatrix : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class NotPositiveDefinite : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class DegenerateScene : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class NonFiniteLoss : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class InvalidScene : public Error {
 public:
  using Error::Error;
};

class InvalidSchedule : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class BadMagic : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class TruncatedFile : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class DimMismatchOnLoad : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

// Parse failure in a key-value scene/config file. line == 0 when the error
// is not tied to a particular line (missing key, unreadable file).
class ConfigError : public Error {
 public:
  ConfigError(const std::string& what, std::size_t line = 0)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

}  // namespace chanopt
