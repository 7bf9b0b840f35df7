#pragma once

#include <stdexcept>
#include <string>

namespace pfsr {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or vector shapes that cannot be combined.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN / Inf where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class EmptyDatasetError : public Error {
 public:
  using Error::Error;
};

class OutOfVocabularyError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace pfsr
