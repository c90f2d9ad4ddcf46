#pragma once

#include <stdexcept>
#include <string>

namespace mtnet {

/// Base of every error raised by the library. Each subclass maps onto one
/// CLI exit code (see cli.hpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape algebra violations (mismatched operands, wrong input size).
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Out-of-range scalar parameters (pooling config, dropout p, lambda ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Invalid NetConfig / TrainConfig / config-file content.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Bad input data: label out of range, non-binary mask, undecodable image,
/// malformed dataset directory.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Misuse of the autograd contract (e.g. backward from a non-scalar).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Empty confusion matrix and similar evaluation failures.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or gradient during training.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// File system failures.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Truncated or malformed checkpoint file.
class CheckpointError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace mtnet
