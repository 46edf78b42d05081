#pragma once

#include <stdexcept>
#include <string>

namespace statdiff {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or violated precondition on user-supplied settings.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Argument outside the mathematical domain of an operation
// (dimension mismatch, negative weights, index out of range).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Numerical failure: divergence, non-finite loss, missing stationary law,
// undefined estimator, failed calibration.
class NumericError : public Error {
 public:
  using Error::Error;
};

// File system or parse failure.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace statdiff
