#pragma once

#include <stdexcept>
#include <string>

namespace anneal {

/// Base class for every error raised by the engine.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Raised when the training set lacks a similar or a dissimilar pair.
class NoThreshold : public Error {
 public:
  using Error::Error;
};

/// Fewer candidates than the requested batch size.
class SelectionExhausted : public Error {
 public:
  using Error::Error;
};

class UndefinedMetric : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

}  // namespace anneal
