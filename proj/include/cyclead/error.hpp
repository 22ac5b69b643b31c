#pragma once

#include <stdexcept>
#include <string>

namespace cyclead {

// Error categories map onto the CLI exit codes (config 2, data 3, numerical 4).
enum class ErrorKind { config, data, numerical };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

struct SpecError : Error {
  explicit SpecError(const std::string& what) : Error(ErrorKind::config, what) {}
};

struct RangeError : Error {
  explicit RangeError(const std::string& what) : Error(ErrorKind::config, what) {}
};

struct DataError : Error {
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

struct EmptyClassError : DataError {
  using DataError::DataError;
};

struct SplitInfeasibleError : DataError {
  using DataError::DataError;
};

struct ShapeError : DataError {
  using DataError::DataError;
};

struct CalibrationError : DataError {
  using DataError::DataError;
};

struct AggregationError : DataError {
  using DataError::DataError;
};

struct InsufficientSamplesError : DataError {
  using DataError::DataError;
};

struct ParseError : DataError {
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : DataError(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

struct NumericalError : Error {
  explicit NumericalError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config:
      return 2;
    case ErrorKind::data:
      return 3;
    case ErrorKind::numerical:
      return 4;
  }
  return 1;
}

}  // namespace cyclead
