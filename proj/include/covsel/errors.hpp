#pragma once

#include <stdexcept>
#include <string>

namespace covsel {

// Base for everything this library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller passed something outside an operation's precondition.
class InputError : public Error {
 public:
  using Error::Error;
};

class DomainError : public InputError {
 public:
  using InputError::InputError;
};

// A matrix that must be positive definite is not.
class SingularityError : public Error {
 public:
  SingularityError(const std::string& what, double eigenvalue)
      : Error(what), eigenvalue_(eigenvalue) {}
  explicit SingularityError(const std::string& what)
      : Error(what), eigenvalue_(0.0) {}

  double eigenvalue() const noexcept { return eigenvalue_; }

 private:
  double eigenvalue_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Arithmetic produced a state that cannot occur in exact arithmetic.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace covsel
