#pragma once

#include <stdexcept>
#include <string>

namespace mtj {

/// Malformed or inconsistent input data (files, manifests, labels, shapes).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values or solver breakdown.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid caller-supplied options.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mtj
