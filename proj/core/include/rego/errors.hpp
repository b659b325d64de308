#pragma once

#include <stdexcept>
#include <string>

namespace rego {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or image dimensions do not satisfy an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A configuration value is out of range or unknown.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A named entity (sample id, reference id, tensor) does not exist.
class NotFoundError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf input or a value outside the accepted domain.
class InvalidValueError : public Error {
 public:
  using Error::Error;
};

/// A precondition on a domain object (e.g. kernel normalization state) was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

class DegenerateEmbeddingError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long iteration)
      : Error(what + " (iteration " + std::to_string(iteration) + ")"), iteration_(iteration) {}
  long iteration() const noexcept { return iteration_; }

 private:
  long iteration_;
};

/// Filesystem, decoding, or serialization failure.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace rego
