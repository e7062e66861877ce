#pragma once

#include <stdexcept>
#include <string>

namespace fusionrank {

// Validation errors (bad input, violated preconditions) map to CLI exit code 1;
// runtime errors (I/O, numerical failure) map to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RuntimeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class TruncationError : public FormatError {
 public:
  using FormatError::FormatError;
};

class DataError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ContractError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class NormalizationError : public DataError {
 public:
  NormalizationError(std::size_t row, const std::string& what)
      : DataError(what), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

class IoError : public RuntimeError {
 public:
  using RuntimeError::RuntimeError;
};

class NumericError : public RuntimeError {
 public:
  using RuntimeError::RuntimeError;
};

}  // namespace fusionrank
