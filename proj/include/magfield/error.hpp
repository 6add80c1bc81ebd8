#pragma once

#include <stdexcept>
#include <string>

namespace magfield {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
  using Error::Error;
};

class DomainError : public Error {
  using Error::Error;
};

/// Violated precondition of an operation (wrong layer count, empty mask...).
class ContractError : public Error {
  using Error::Error;
};

class FormatError : public Error {
  using Error::Error;
};

class VersionMismatchError : public FormatError {
  using FormatError::FormatError;
};

class TruncatedFileError : public FormatError {
  using FormatError::FormatError;
};

class DigestMismatchError : public FormatError {
  using FormatError::FormatError;
};

class IoError : public Error {
  using Error::Error;
};

class SpecError : public Error {
  using Error::Error;
};

class GenerationError : public Error {
  using Error::Error;
};

class UnsupportedTaskError : public Error {
  using Error::Error;
};

class ConditioningError : public Error {
  using Error::Error;
};

class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, double residual = 0.0)
      : Error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

class AttentionError : public Error {
  using Error::Error;
};

class IngestionError : public Error {
  using Error::Error;
};

class UsageError : public Error {
  using Error::Error;
};

}  // namespace magfield
