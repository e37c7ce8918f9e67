#pragma once

#include <stdexcept>
#include <string>

namespace vesselseg {

/// Base class for every error raised by the toolkit. The CLI maps these to
/// exit status 1 and prints what().
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Wrong raster layout (channel count, bit depth).
class FormatError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Spatial sizes incompatible with the requested operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Image and mask (or probability map and mask) do not line up.
class PairingError : public Error {
 public:
  using Error::Error;
};

// Metric is mathematically undefined for the given data (e.g. one class only).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

class CheckpointIncompatibleError : public Error {
 public:
  using Error::Error;
};

class CheckpointIntegrityError : public Error {
 public:
  using Error::Error;
};

// Raised instead of std::bad_alloc so callers can fall back to tiled inference.
class OutOfMemoryError : public Error {
 public:
  using Error::Error;
};

class NonFiniteLossError : public Error {
 public:
  using Error::Error;
};

}  // namespace vesselseg
