#pragma once

#include <stdexcept>
#include <string>

namespace missbart {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument domain (non-positive gamma parameters, dof too small, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure: factorization, unbracketed root, non-finite result.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input data (CSV parse failures, schema mismatch).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid usage of the CLI or of an export request.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace missbart
