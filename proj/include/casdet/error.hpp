#pragma once

#include <stdexcept>
#include <string>

namespace casdet {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes disagree; the message names the offending axis.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value, unknown key or inconsistent setting.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite value.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Malformed checkpoint or a checkpoint that does not fit the model.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace casdet
