// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace srdl {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes disagree.
class DimensionError : public Error {
public:
  using Error::Error;
};

/// A precondition of a call was violated by the caller.
class ContractError : public Error {
public:
  using Error::Error;
};

/// A file does not have the expected layout.
class FormatError : public Error {
public:
  using Error::Error;
};

class UnsupportedVersionError : public FormatError {
public:
  using FormatError::FormatError;
};

/// A file is internally inconsistent or truncated.
class IntegrityError : public Error {
public:
  using Error::Error;
};

/// Malformed or missing input data (CSV cells, empty sets, ...).
class DataError : public Error {
public:
  using Error::Error;
};

class ConfigError : public Error {
public:
  using Error::Error;
};

/// Non-finite values appeared during optimization.
class NumericError : public Error {
public:
  NumericError(const std::string& what, int epoch = 0) : Error(what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

private:
  int epoch_;
};

}  // namespace srdl
