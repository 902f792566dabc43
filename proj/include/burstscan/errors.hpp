#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace burstscan {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input text. `line()` is 1-based; 0 when unknown.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Well-formed input that violates a data invariant (e.g. count > total).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class EmptySeriesError : public Error {
 public:
  using Error::Error;
};

/// Statistic or baseline undefined because the pooled proportion is 0 or 1.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class NotPositiveDefiniteError : public Error {
 public:
  NotPositiveDefiniteError(std::size_t row, double pivot)
      : Error("matrix is not positive definite (pivot " + std::to_string(pivot) +
              " at row " + std::to_string(row) + ")"),
        row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

class AdmmConvergenceError : public Error {
 public:
  AdmmConvergenceError(int iterations, double primal, double dual)
      : Error("ADMM did not converge in " + std::to_string(iterations) +
              " iterations (primal residual " + std::to_string(primal) +
              ", dual residual " + std::to_string(dual) + ")"),
        iterations_(iterations),
        primal_(primal),
        dual_(dual) {}
  int iterations() const noexcept { return iterations_; }
  double primal_residual() const noexcept { return primal_; }
  double dual_residual() const noexcept { return dual_; }

 private:
  int iterations_;
  double primal_;
  double dual_;
};

class SolverError : public Error {
 public:
  using Error::Error;
};

/// A jump-test window has no points on one side.
class WindowError : public Error {
 public:
  using Error::Error;
};

class NullConstructionError : public Error {
 public:
  using Error::Error;
};

class SpecError : public ParseError {
 public:
  using ParseError::ParseError;
};

}  // namespace burstscan
