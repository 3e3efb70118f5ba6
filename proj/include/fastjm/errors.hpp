#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fastjm {

// Numerical or model-state failure during evaluation or fitting.
class FitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user input: malformed files, config referencing unknown columns, etc.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Configuration or schema problem (unknown column, bad option value).
class ConfigError : public InputError {
 public:
  using InputError::InputError;
};

class DimensionError : public std::invalid_argument {
 public:
  DimensionError(const std::string& field, std::size_t expected, std::size_t actual)
      : std::invalid_argument("dimension mismatch in " + field + ": expected length " +
                              std::to_string(expected) + ", got " + std::to_string(actual)),
        field_(field),
        expected_(expected),
        actual_(actual) {}

  const std::string& field() const noexcept { return field_; }
  std::size_t expected() const noexcept { return expected_; }
  std::size_t actual() const noexcept { return actual_; }

 private:
  std::string field_;
  std::size_t expected_;
  std::size_t actual_;
};

}  // namespace fastjm
