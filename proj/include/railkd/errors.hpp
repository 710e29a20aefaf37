#pragma once

#include <stdexcept>
#include <string>

namespace railkd {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration (bad lambda weights, k > n, unknown method...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Requested operation does not apply to this kind of run.
class MethodError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Malformed or out-of-range input data.
class DataError : public Error {
 public:
  using Error::Error;
};

class IoError : public DataError {
 public:
  using DataError::DataError;
};

/// Non-finite values, degenerate norms, divergence.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Not enough timing samples to report a statistic.
class MeasurementError : public NumericError {
 public:
  using NumericError::NumericError;
};

/// Caller violated an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

}  // namespace railkd
