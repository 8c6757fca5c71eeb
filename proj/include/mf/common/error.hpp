#pragma once

#include <stdexcept>
#include <string>

namespace mf {

// Shape or extent disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Caller violated a documented precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Non-finite or otherwise unusable numeric values.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Domain value failed validation (non-orthonormal rotation, bad keyframes, ...).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Structured document failed schema checks; path() is a JSON-pointer-like location.
class SchemaError : public std::runtime_error {
 public:
  SchemaError(std::string path, const std::string& what)
      : std::runtime_error(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

// Long-running work stopped at the caller's request.
class CancelledError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mf
