#pragma once

#include <stdexcept>
#include <string>

namespace galaxyedit {

/// Tensor or image shape does not satisfy an operation's precondition.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Bad configuration: unknown keys, invalid ranges, missing files.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An external model client failed after exhausting its retries.
class ClientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numeric failure during training (non-finite loss or gradient).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace galaxyedit
