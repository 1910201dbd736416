#ifndef QLRECOVER_ERRORS_HPP
#define QLRECOVER_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace qlr {

/// Invalid configuration values (grid sizes, weights, exponent books, config files).
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Caller broke a documented precondition (index order, dimension mismatch).
class ContractViolation : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

/// Numerical breakdown: singular systems, overflow, non-convergence.
class NumericalError : public std::runtime_error {
public:
  explicit NumericalError(const std::string& what, double value = 0.0)
      : std::runtime_error(what), value_(value) {}

  /// Diagnostic carried with the failure (sigma_min, last increment, ...).
  double value() const noexcept { return value_; }

private:
  double value_;
};

/// Near-singular averaging operator or variant resolvent.
class SingularOperatorError : public NumericalError {
public:
  SingularOperatorError(const std::string& what, double sigma_min)
      : NumericalError(what, sigma_min) {}
  double sigma_min() const noexcept { return value(); }
};

/// Model-side violation: ball exit, lost ellipticity, non-equilibrium shift.
class ModelError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace qlr

#endif // QLRECOVER_ERRORS_HPP
