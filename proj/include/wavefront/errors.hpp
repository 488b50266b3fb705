#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace wavefront {

// Root of the library's error hierarchy.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Bad input: malformed expressions, invalid scenario files, unusable grids.
class InputError : public Error {
 public:
  using Error::Error;
};

class SyntaxError : public InputError {
 public:
  SyntaxError(const std::string& what, std::size_t position)
      : InputError(what), position_(position) {}
  // 1-based character position inside the offending source string.
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

class UnknownVariableError : public SyntaxError {
 public:
  using SyntaxError::SyntaxError;
};

class SchemaError : public InputError {
 public:
  using InputError::InputError;
};

class InsufficientGridError : public InputError {
 public:
  using InputError::InputError;
};

// Model assumptions violated at evaluation time.
class ModelError : public Error {
 public:
  using Error::Error;
};

// log of non-positive, division by zero, fractional power of a negative base.
class EvalDomainError : public ModelError {
 public:
  using ModelError::ModelError;
};

class NonFiniteError : public ModelError {
 public:
  using ModelError::ModelError;
};

class SingularHessianError : public ModelError {
 public:
  using ModelError::ModelError;
};

class NoConvergenceError : public ModelError {
 public:
  using ModelError::ModelError;
};

class NotPositiveError : public ModelError {
 public:
  using ModelError::ModelError;
};

class OmegaNonpositiveError : public ModelError {
 public:
  using ModelError::ModelError;
};

class NoRootError : public ModelError {
 public:
  using ModelError::ModelError;
};

class RankDeficiencyError : public ModelError {
 public:
  using ModelError::ModelError;
};

class DimensionTooSmallError : public ModelError {
 public:
  using ModelError::ModelError;
};

class WPrimeZeroError : public ModelError {
 public:
  using ModelError::ModelError;
};

class StepLimitError : public ModelError {
 public:
  using ModelError::ModelError;
};

// Raised when the two differentiation backends disagree beyond tolerance.
class BackendMismatchError : public ModelError {
 public:
  using ModelError::ModelError;
};

}  // namespace wavefront
