#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace mbfg {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inconsistent mechanism description, layout or graph construction.
class ConfigurationError : public Error {
 public:
  using Error::Error;
};

/// Input file could not be parsed or validated. `field` is a JSON-pointer-like
/// path to the offending entry (empty when unknown).
class MechanismFileError : public ConfigurationError {
 public:
  MechanismFileError(std::string field, const std::string& what)
      : ConfigurationError(field.empty() ? what : field + ": " + what),
        field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

class DimensionMismatchError : public Error {
 public:
  using Error::Error;
};

/// Constraint Jacobian lost rank; `pivot` is the constraint row found to be
/// linearly dependent on the others.
class SingularConfigurationError : public Error {
 public:
  SingularConfigurationError(int pivot, const std::string& what)
      : Error(what), pivot_(pivot) {}
  int pivot() const { return pivot_; }

 private:
  int pivot_;
};

/// The declared independent coordinates cannot parameterize the current
/// configuration ([Phi_q; B] is singular).
class BadDofChoiceError : public Error {
 public:
  using Error::Error;
};

class PositionProblemDiverged : public Error {
 public:
  using Error::Error;
};

class SolverDivergedError : public Error {
 public:
  using Error::Error;
};

/// Raised while linearizing; carries the index of the failing factor.
class FactorEvaluationError : public Error {
 public:
  FactorEvaluationError(std::size_t factor_index, const std::string& what)
      : Error("factor #" + std::to_string(factor_index) + ": " + what),
        factor_index_(factor_index) {}
  std::size_t factor_index() const { return factor_index_; }

 private:
  std::size_t factor_index_;
};

/// Information matrix is singular; lists the unobservable directions.
class RankDeficiencyError : public Error {
 public:
  RankDeficiencyError(std::vector<std::string> null_directions,
                      const std::string& what)
      : Error(what), null_directions_(std::move(null_directions)) {}
  const std::vector<std::string>& null_directions() const {
    return null_directions_;
  }

 private:
  std::vector<std::string> null_directions_;
};

}  // namespace mbfg
