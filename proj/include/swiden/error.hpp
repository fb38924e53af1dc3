#pragma once

#include <stdexcept>
#include <string>

namespace swiden {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid hyperparameter or run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Dataset content or layout problems (insufficient images, bad split, unknown style dir).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary or text file (bad magic, truncated, bad PPM header).
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class RoutingError : public Error {
 public:
  using Error::Error;
};

class LabelError : public Error {
 public:
  using Error::Error;
};

/// Malformed argument values, e.g. probability rows that do not sum to one.
class InputError : public Error {
 public:
  using Error::Error;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

}  // namespace swiden
