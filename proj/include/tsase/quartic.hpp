#pragma once

#include "tsase/common.hpp"

#include <array>

namespace tsase {

/// All four roots of the monic quartic x^4 + a3 x^3 + a2 x^2 + a1 x + a0,
/// computed as eigenvalues of the companion matrix.
inline std::array<Complex, 4> quartic_roots(double a3, double a2, double a1, double a0) {
    Mat companion = Mat::Zero(4, 4);
    companion(0, 3) = -a0;
    companion(1, 3) = -a1;
    companion(2, 3) = -a2;
    companion(3, 3) = -a3;
    companion(1, 0) = 1.0;
    companion(2, 1) = 1.0;
    companion(3, 2) = 1.0;
    Eigen::EigenSolver<Mat> es(companion, false);
    std::array<Complex, 4> roots;
    for (int i = 0; i < 4; ++i) roots[i] = es.eigenvalues()(i);
    return roots;
}

} // namespace tsase
