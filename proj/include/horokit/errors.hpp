#pragma once

#include <stdexcept>
#include <string>

namespace horokit {

/// Base class for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes of configurations/velocities do not match the mass system.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Evaluation requested outside the domain (collision configurations, x = y, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A numerical search (multi-start minimization) failed to produce an admissible result.
class SearchFailure : public Error {
 public:
  using Error::Error;
};

/// Root bracketing failed (no sign change, complex roots).
class BracketError : public Error {
 public:
  using Error::Error;
};

/// An iterative limit (velocity sequence, Cauchy sequence) did not converge.
class NonConvergence : public Error {
 public:
  using Error::Error;
};

/// A least-squares design is too ill-conditioned to trust (fit window too short).
class ConditioningError : public Error {
 public:
  using Error::Error;
};

/// No calibrating curve could be followed (the motion hit a collision).
class CalibrationUnavailable : public Error {
 public:
  using Error::Error;
};

/// Inputs are mutually inconsistent (e.g. trajectory energy differs from the requested level).
class InconsistencyError : public Error {
 public:
  using Error::Error;
};

/// Malformed or missing configuration entries; carries the offending key.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error("config key '" + key + "': " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

}  // namespace horokit
