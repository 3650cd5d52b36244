#pragma once

#include <stdexcept>
#include <string>

namespace rulstm {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor or feature dimensions.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A value outside its admissible set (probabilities, off-grid times, k).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Caller violated a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Time-step or index outside the valid range.
class RangeError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent or missing input data (records, videos, vocabularies).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Malformed file content; the message carries the file and line.
class ParseError : public Error {
 public:
  using Error::Error;
};

class EvaluationError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace rulstm
