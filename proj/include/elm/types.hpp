#pragma once

#include <Eigen/Core>

#include <stdexcept>

namespace elm {

/// Oracle and iterate vectors.
using Vector = Eigen::VectorXd;
/// Jacobian selections are stored transposed: n x p, so that `J * lambda`
/// lives in the primal space.
using Matrix = Eigen::MatrixXd;

/// Base of all errors raised by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
  public:
    using Error::Error;
};

/// A parameter or configuration violates a stated precondition.
class ParameterError : public Error {
  public:
    using Error::Error;
};

} // namespace elm
