#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace gmmlab {

/// Invalid argument. `field()` names the offending parameter.
class ParameterError : public std::invalid_argument {
 public:
  ParameterError(std::string field, const std::string& what)
      : std::invalid_argument(field + ": " + what), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Cumulative alphas are not strictly decreasing along the requested step pair.
class ScheduleOrderError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A step with alpha_cum == 1 makes the epsilon <-> x0 relation singular.
class SingularStepError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// sigma^2 exceeds 1 - alpha_prev, so the DDIM direction coefficient would be imaginary.
class VarianceOverflowError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Closed-form enumeration would exceed the configured component cap.
class CapExceededError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace gmmlab
