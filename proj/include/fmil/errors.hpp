#pragma once

#include <stdexcept>

namespace fmil {

struct ShapeMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DomainViolation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AbsoluteContinuityViolation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SingularSystem : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NonConvergence : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DivergedParameters : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EmptyDemos : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MissingRun : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace fmil
