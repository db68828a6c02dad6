#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mmlip {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values, negative constants, asymmetric matrices and similar
/// precondition failures.
class InvalidInputError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An input that is well-formed but makes the operation meaningless, e.g. a
/// zero vector that must be normalized.
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

class UnsupportedConfigurationError : public Error {
 public:
  using Error::Error;
};

/// Raised when a Lipschitz estimator cannot form a single valid sample pair.
class DegenerateDomainError : public Error {
 public:
  using Error::Error;
};

/// A user callable produced NaN/Inf. The offending input is kept for
/// diagnostics.
class NonFiniteError : public Error {
 public:
  NonFiniteError(const std::string& what, std::vector<double> sample)
      : Error(what), sample_(std::move(sample)) {}

  const std::vector<double>& sample() const noexcept { return sample_; }

 private:
  std::vector<double> sample_;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Configuration parse or validation failure. `line` is 1-based, 0 if unknown.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& what, std::size_t line = 0)
      : Error(line > 0 ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace mmlip
