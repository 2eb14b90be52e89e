#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>

namespace tsase {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;
using Complex = std::complex<double>;

inline constexpr double kPi = 3.141592653589793238462643383279502884;

inline double deg2rad(double deg) { return deg * kPi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / kPi; }

/// Wrap an angle into (-pi, pi].
inline double wrap_angle(double rad) {
    double a = std::remainder(rad, 2.0 * kPi);
    if (a <= -kPi) a += 2.0 * kPi;
    return a;
}

class error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Bad user-facing configuration (CLI exit code 2).
class config_error : public error {
  public:
    using error::error;
};

/// Numerical failure: singular systems, non-convergence (CLI exit code 3).
class numerical_error : public error {
  public:
    using error::error;
};

/// File and fixture problems, including parse errors (CLI exit code 4).
class io_error : public error {
  public:
    using error::error;
};

} // namespace tsase
