#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace councilnd {

// Base class for every error raised by the library. The CLI maps the
// concrete subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad caller-supplied parameter (probability out of range, M < 2, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

class InsufficientSamplesError : public ParameterError {
 public:
  using ParameterError::ParameterError;
};

// Novelty calibration needs both known and novel scores.
class CalibrationError : public ParameterError {
 public:
  using ParameterError::ParameterError;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Shape mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input data.
class DataError : public Error {
 public:
  using Error::Error;
};

// Parse failure with a 1-based position in the offending file.
class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::size_t line, std::size_t column = 0,
             const std::string& source = {})
      : DataError(format(what, line, column, source)), line_(line), column_(column) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  static std::string format(const std::string& what, std::size_t line, std::size_t column,
                            const std::string& source) {
    std::string out = source.empty() ? std::string() : source + ": ";
    out += "line " + std::to_string(line);
    if (column != 0) out += ", column " + std::to_string(column);
    return out + ": " + what;
  }

  std::size_t line_;
  std::size_t column_;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class SingularMatrixError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace councilnd
