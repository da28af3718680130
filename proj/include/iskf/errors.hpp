#pragma once

#include <stdexcept>
#include <string>

namespace iskf {

/// Base class for every error thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Matrix or vector dimensions do not agree.
struct DimensionMismatch : Error {
  using Error::Error;
};

/// A scalar argument is outside its admissible range.
struct InvalidParameter : Error {
  using Error::Error;
};

/// A sequence argument that must be non-empty is empty.
struct EmptyInput : Error {
  using Error::Error;
};

/// The measurement noise covariance V = G G^T is not positive definite.
struct SingularMeasurementNoise : Error {
  using Error::Error;
};

/// The innovation covariance C P C^T + V could not be factored.
struct SingularInnovationCovariance : Error {
  using Error::Error;
};

/// The prior covariance is not positive definite, so it cannot be whitened.
struct SingularPriorCovariance : Error {
  using Error::Error;
};

/// The scaling matrix Sigma^-1 + C^T V^-1 C could not be factored.
struct SingularScalingMatrix : Error {
  using Error::Error;
};

/// An iterative solve hit its iteration cap before reaching tolerance.
struct NoConvergence : Error {
  using Error::Error;
};

/// A configuration file failed schema validation. The message carries the
/// offending field path.
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace iskf
