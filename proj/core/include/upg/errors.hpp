#pragma once

#include <stdexcept>
#include <string>

namespace upg {

// Bad configuration: unknown names, dimension mismatches, invalid
// hyperparameters. The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed inputs to a pure operation (empty groups, out-of-range ids).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Missing or inconsistent data (demonstration files, missing demos).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A gradient oracle produced a non-finite evaluation.
class OracleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training hit a non-finite loss or gradient.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace upg
