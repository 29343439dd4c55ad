#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace crb {

// Root of every error the engine raises on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or command-line usage (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Input data that cannot be accepted (CLI exit code 3).
class DataError : public Error {
 public:
  using Error::Error;
};

// Malformed record text. line is 1-based; 0 when unknown.
class ParseError : public DataError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : DataError(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Shapes or dimensions disagree with the configured schema.
class SchemaError : public DataError {
 public:
  using DataError::DataError;
};

// Uniqueness or referential constraints are violated.
class IntegrityError : public DataError {
 public:
  using DataError::DataError;
};

// A statistic is undefined on the given input (too few values, zero width).
class DegenerateError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace crb
