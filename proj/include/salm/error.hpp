#pragma once

#include <stdexcept>
#include <string>

namespace salm {

// Error taxonomy maps onto the CLI exit-code contract:
//   ConfigError -> 2, DataError -> 3, NumericError -> 4.

/// Bad configuration: unknown keys, invalid hyperparameters, shape mismatches.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Bad input data: malformed files, invalid UTF-8, undersized corpora.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numeric failure: non-finite values where finite ones are required.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace salm
