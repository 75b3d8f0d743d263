#pragma once

#include <stdexcept>
#include <string>

namespace dte {

// Configuration problems detected before any computation (bad spec, bad grid,
// non-PSD matrix, ...). CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or inconsistent input data (parse failures, duplicate keys,
// non-binary treatments). CLI maps this to exit code 3.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// A required group or cell is too small for the requested analysis.
// CLI maps this to exit code 4.
class InsufficientDataError : public std::runtime_error {
 public:
  explicit InsufficientDataError(const std::string& msg)
      : std::runtime_error(msg) {}
};

}  // namespace dte
