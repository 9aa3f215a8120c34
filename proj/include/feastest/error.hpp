#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace feastest {

// Base of every error the library raises. The CLI maps each subclass to its
// own exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Syntax error in an expression string; `position` is a 0-based byte offset.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t position)
      : Error(what + " at position " + std::to_string(position)),
        position_(position) {}
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

// Identifier not declared as a parameter or covariate.
class UndeclaredSymbol : public ParseError {
 public:
  UndeclaredSymbol(const std::string& name, std::size_t position)
      : ParseError("undeclared symbol '" + name + "'", position), name_(name) {}
  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
};

// log of a non-positive value, division by zero, non-finite result.
class DomainError : public Error {
 public:
  using Error::Error;
};

// The constraint set {theta : h(theta) in Omega} is empty (or the exact rows
// of a linear system have no nonnegative solution).
class Infeasible : public Error {
 public:
  using Error::Error;
};

// An iterative method ran out of iterations. Carries the best point seen.
class NonConvergence : public Error {
 public:
  NonConvergence(const std::string& what, std::vector<double> incumbent,
                 double objective)
      : Error(what), incumbent_(std::move(incumbent)), objective_(objective) {}
  const std::vector<double>& incumbent() const noexcept { return incumbent_; }
  double objective() const noexcept { return objective_; }

 private:
  std::vector<double> incumbent_;
  double objective_;
};

class NumericalFailure : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

}  // namespace feastest
