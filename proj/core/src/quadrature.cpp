#include "mirrorflow/quadrature.hpp"

#include <cmath>

#include "mirrorflow/errors.hpp"

namespace mirrorflow {

namespace {

struct Panel {
  double a, m, b;
  double fa, fm, fb;
  double whole;
};

double simpson(double a, double b, double fa, double fm, double fb) { return (b - a) / 6.0 * (fa + 4.0 * fm + fb); }

double refine(const std::function<double(double)>& f, const Panel& p, double tol, int depth) {
  const double lm = 0.5 * (p.a + p.m);
  const double rm = 0.5 * (p.m + p.b);
  const double flm = f(lm);
  const double frm = f(rm);
  const double left = simpson(p.a, p.m, p.fa, flm, p.fm);
  const double right = simpson(p.m, p.b, p.fm, frm, p.fb);
  const double diff = left + right - p.whole;
  if (std::abs(diff) <= 15.0 * tol) return left + right + diff / 15.0;
  if (depth <= 0) throw NumericalError("adaptive_simpson: maximum recursion depth reached");
  return refine(f, {p.a, lm, p.m, p.fa, flm, p.fm, left}, 0.5 * tol, depth - 1) +
         refine(f, {p.m, rm, p.b, p.fm, frm, p.fb, right}, 0.5 * tol, depth - 1);
}

}  // namespace

double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double rel_tol, int max_depth) {
  if (a == b) return 0.0;
  const double m = 0.5 * (a + b);
  const double fa = f(a);
  const double fm = f(m);
  const double fb = f(b);
  const double whole = simpson(a, b, fa, fm, fb);
  // A coarse estimate of the magnitude turns the relative tolerance into an absolute one.
  double scale = std::abs(whole);
  for (int k = 1; k < 16; ++k) {
    const double x = a + (b - a) * k / 16.0;
    scale = std::max(scale, std::abs(f(x)) * std::abs(b - a) / 16.0);
  }
  const double tol = rel_tol * std::max(scale, 1e-300);
  return refine(f, {a, m, b, fa, fm, fb, whole}, tol, max_depth);
}

}  // namespace mirrorflow
