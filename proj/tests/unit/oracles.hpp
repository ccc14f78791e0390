#pragma once

// Reference computations written independently of the library: scalar
// potentials from their defining formulas, a golden-section conjugate,
// extended-precision log-sum-exp and finite differences.

#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

inline double r_hyperbolic(double t, double lambda) {
  return t * std::asinh(t / std::sqrt(lambda)) - std::sqrt(t * t + lambda);
}

inline double r_smoothed(double t, double p, double lambda) {
  return std::pow(std::abs(t), p) / p + 0.5 * lambda * t * t;
}

inline double r_euclidean(double t) { return 0.5 * t * t; }

/// argmax of a concave f on [lo, hi].
inline double golden_argmax(const std::function<double(double)>& f, double lo, double hi, int iters = 200) {
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - g * (b - a), d = a + g * (b - a);
  double fc = f(c), fd = f(d);
  for (int i = 0; i < iters && b - a > 1e-15 * (1.0 + std::abs(a) + std::abs(b)); ++i) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - g * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + g * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

/// sup_x x z - r(x) for a convex scalar r, bracketing by doubling.
inline double conjugate(const std::function<double(double)>& r, double z) {
  const auto obj = [&](double x) { return x * z - r(x); };
  double lo = -1.0, hi = 1.0;
  while (obj(2.0 * hi) > obj(hi)) hi *= 2.0;
  while (obj(2.0 * lo) > obj(lo)) lo *= 2.0;
  lo *= 2.0;
  hi *= 2.0;
  return obj(golden_argmax(obj, lo, hi));
}

inline double central_diff(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

/// log(sum exp(v)) accumulated in long double without shifting.
inline double lse_long(const std::vector<double>& v) {
  long double s = 0.0L;
  for (double x : v) s += std::exp(static_cast<long double>(x));
  return static_cast<double>(std::log(s));
}

}  // namespace oracle
