#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace freehunch {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

/// Caller broke a documented precondition (dimension mismatch and the like).
class ContractViolation : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "contract_violation"; }
};

/// Family of failures caused by the numbers rather than by the caller.
class NumericalError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "numerical"; }
};

class NumericalRankError : public NumericalError {
 public:
  using NumericalError::NumericalError;
  const char* kind() const noexcept override { return "numerical_rank"; }
};

class DomainError : public NumericalError {
 public:
  using NumericalError::NumericalError;
  const char* kind() const noexcept override { return "domain"; }
};

class TimeUpdateDomainError : public DomainError {
 public:
  TimeUpdateDomainError(const std::string& what, double eigenvalue_bound)
      : DomainError(what), eigenvalue_bound_(eigenvalue_bound) {}
  const char* kind() const noexcept override { return "time_update_domain"; }
  /// Smallest eigenvalue (or an upper bound on it) of the offending matrix.
  double eigenvalue_bound() const noexcept { return eigenvalue_bound_; }

 private:
  double eigenvalue_bound_;
};

class NumericalBreakdown : public NumericalError {
 public:
  using NumericalError::NumericalError;
  const char* kind() const noexcept override { return "numerical_breakdown"; }
};

class RepresentationCorruption : public NumericalError {
 public:
  using NumericalError::NumericalError;
  const char* kind() const noexcept override { return "representation_corruption"; }
};

class CapacityError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "capacity"; }
};

class InsufficientDataError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "insufficient_data"; }
};

class UnsupportedOperatorError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "unsupported_operator"; }
};

/// Aggregated configuration problems; `problems()` lists every one found.
class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<std::string> problems)
      : Error(join(problems)), problems_(std::move(problems)) {}
  const char* kind() const noexcept override { return "validation"; }
  const std::vector<std::string>& problems() const noexcept { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& items) {
    std::string out = "invalid configuration";
    for (const auto& p : items) out += "\n  - " + p;
    return out;
  }
  std::vector<std::string> problems_;
};

}  // namespace freehunch
