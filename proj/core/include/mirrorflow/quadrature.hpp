#pragma once

#include <functional>

namespace mirrorflow {

/// Adaptive Simpson quadrature of f over [a, b] to relative tolerance rel_tol.
/// Throws NumericalError when the recursion depth is exhausted.
double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double rel_tol = 1e-8,
                        int max_depth = 60);

}  // namespace mirrorflow
