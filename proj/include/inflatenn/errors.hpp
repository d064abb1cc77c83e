#pragma once

#include <stdexcept>
#include <string>

namespace inflatenn {

// Base class for all library errors. Subclasses map onto CLI exit codes:
// ConfigError -> 2, DataError -> 3, everything else -> 1.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/rank mismatches between tensors or layers.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid values: empty inputs, out-of-range scalars, degenerate series.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Correlation metrics on zero-variance series.
class UndefinedMetricError : public DomainError {
 public:
  using DomainError::DomainError;
};

// Train-split statistics unusable (zero label std).
class DegenerateStatsError : public DomainError {
 public:
  using DomainError::DomainError;
};

// Invalid configuration: bad parameter combinations, unsupported modes.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A layer kind the requested transform cannot handle.
class UnsupportedLayerError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Model pieces combined in an unsupported way (e.g. trunk expected, head found).
class CompositionError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Missing or mismatched cached state (backward without matching forward).
class StateError : public Error {
 public:
  using Error::Error;
};

// Problems with external data: files, payloads, corrupt values.
class DataError : public Error {
 public:
  using Error::Error;
};

// Bad magic or malformed structure in a binary pack.
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

// Payload shorter than the header promises.
class LengthError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace inflatenn
