#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace hessobs {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// An eigenvalue tuple fell outside the open cone of the symmetric function.
class OutsideCone : public Error {
public:
  OutsideCone(const std::string &what, Eigen::VectorXd lambda)
      : Error(what), lambda_(std::move(lambda)) {}
  const Eigen::VectorXd &lambda() const noexcept { return lambda_; }

private:
  Eigen::VectorXd lambda_;
};

class NotSPD : public Error {
public:
  using Error::Error;
};

class GridTooSmall : public Error {
public:
  using Error::Error;
};

class BadEpsilon : public Error {
public:
  using Error::Error;
};

/// Raised when an operator needs an admissible state. Carries the flat grid
/// indices of the offending points.
class NotAdmissible : public Error {
public:
  NotAdmissible(const std::string &what, std::vector<std::size_t> points)
      : Error(what), points_(std::move(points)) {}
  const std::vector<std::size_t> &points() const noexcept { return points_; }

private:
  std::vector<std::size_t> points_;
};

class NoAdmissibleStart : public Error {
public:
  using Error::Error;
};

/// A sampled structure condition failed; `condition` names it, `witness`
/// holds the sample at which it failed.
class StructureViolation : public Error {
public:
  StructureViolation(std::string condition, Eigen::VectorXd witness,
                     const std::string &what)
      : Error(what), condition_(std::move(condition)),
        witness_(std::move(witness)) {}
  const std::string &condition() const noexcept { return condition_; }
  const Eigen::VectorXd &witness() const noexcept { return witness_; }

private:
  std::string condition_;
  Eigen::VectorXd witness_;
};

/// Configuration errors are anchored at a 1-based line/column.
class ConfigError : public Error {
public:
  ConfigError(const std::string &message, int line = 0, int column = 0)
      : Error(format(message, line, column)), line_(line), column_(column) {}
  int line() const noexcept { return line_; }
  int column() const noexcept { return column_; }

private:
  static std::string format(const std::string &message, int line, int column) {
    if (line <= 0)
      return message;
    return "line " + std::to_string(line) + ", column " +
           std::to_string(column) + ": " + message;
  }
  int line_;
  int column_;
};

} // namespace hessobs
