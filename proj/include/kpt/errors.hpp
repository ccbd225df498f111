#pragma once

#include <stdexcept>
#include <string>

namespace kpt {

/// Operand shapes do not fit the operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A documented precondition of an API call was violated by the caller.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// User-supplied data (images, keypoints, configs) is invalid.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// File could not be read or written, or has the wrong format.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training diverged or its prerequisites are missing.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace kpt
