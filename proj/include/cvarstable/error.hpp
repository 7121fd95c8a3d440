#pragma once

#include <stdexcept>
#include <string>

namespace cvarstable {

/// Broad failure classes. The CLI maps them onto process exit codes.
enum class ErrorKind {
  Validation = 2,  // bad parameters, shapes, configs
  Numeric = 3,     // decompositions, estimation and sampler failures
  Io = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Parameter outside its mathematical domain.
class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what) : Error(ErrorKind::Validation, what) {}
};

/// Non-conformable matrices or series too short for the requested operation.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ErrorKind::Validation, what) {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(ErrorKind::Validation, what) {}
};

/// Failed factorisation, singular system, non-finite chain state.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};

/// Sampler failure with the offending iteration attached.
class SamplerError : public NumericError {
 public:
  SamplerError(const std::string& what, long iteration)
      : NumericError(what + " (iteration " + std::to_string(iteration) + ")"), iteration_(iteration) {}
  long iteration() const noexcept { return iteration_; }

 private:
  long iteration_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::Io, what) {}
};

}  // namespace cvarstable
