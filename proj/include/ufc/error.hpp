#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ufc {

/// Base of every error raised by the library. Each subclass maps to one
/// CLI exit code (see tools/ufc.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes that do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Argument outside the mathematical domain (e.g. non-positive temperature).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration, plan or hyperparameter.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Caller broke a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced or a normalizer vanished.
class NumericError : public Error {
 public:
  using Error::Error;
};

class EvaluationError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

/// Malformed file. `offset` is the byte position where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

// Missing files, unwritable paths.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace ufc
