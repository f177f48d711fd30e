#pragma once

#include <stdexcept>
#include <string>

namespace finfilt {

/// Base class for failures of a numerical procedure on otherwise valid input.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class QuadratureError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class ConvergenceError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// A linear system whose condition estimate exceeds the configured threshold.
class IllConditionedError : public NumericalError {
 public:
  IllConditionedError(const std::string& what, double condition)
      : NumericalError(what), condition_(condition) {}
  double condition() const noexcept { return condition_; }

 private:
  double condition_;
};

/// The leading canonical parameter reached or crossed zero: the density is
/// no longer integrable.
class BoundaryError : public NumericalError {
 public:
  BoundaryError(const std::string& what, double leading)
      : NumericalError(what), leading_(leading) {}
  double leading_coefficient() const noexcept { return leading_; }

 private:
  double leading_;
};

/// Mass or support outside what a routine can see (quadrature window,
/// grid, observation/prior incompatibility).
class DomainError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace finfilt
