#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "mirrorflow/errors.hpp"
#include "mirrorflow/potentials.hpp"
#include "oracles.hpp"

using namespace mirrorflow;

namespace {

struct Case {
  MirrorPotential pot;
  std::function<double(double)> r;
};

std::vector<Case> all_cases() {
  std::vector<Case> out;
  out.push_back({MirrorPotential::euclidean(), [](double t) { return oracle::r_euclidean(t); }});
  for (double lam : {1e-4, 0.1, 1.0, 10.0}) {
    out.push_back({MirrorPotential::hyperbolic(lam), [lam](double t) { return oracle::r_hyperbolic(t, lam); }});
    for (double p : {2.0, 3.0, 10.0}) {
      out.push_back({MirrorPotential::smoothed(p, lam), [p, lam](double t) { return oracle::r_smoothed(t, p, lam); }});
    }
  }
  return out;
}

// Coordinates with magnitudes spread over [1e-2, 10] and random signs.
std::vector<double> random_theta(std::mt19937_64& gen, std::size_t n) {
  std::uniform_real_distribution<double> mag(-2.0, 1.0), sgn(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = std::pow(10.0, mag(gen)) * (sgn(gen) < 0.5 ? -1.0 : 1.0);
  return v;
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace

TEST_CASE("eval_bundle examples") {
  const std::vector<double> zero{0.0, 0.0};
  auto h = eval_bundle(MirrorPotential::hyperbolic(1.0), zero);
  CHECK(h.value == doctest::Approx(-2.0));
  CHECK(h.grad == std::vector<double>{0.0, 0.0});
  CHECK(h.metric_diag == std::vector<double>{1.0, 1.0});

  const std::vector<double> t34{3.0, 4.0};
  auto e = eval_bundle(MirrorPotential::euclidean(), t34);
  CHECK(e.value == 12.5);
  CHECK(e.grad == t34);
  CHECK(e.metric_diag == std::vector<double>{1.0, 1.0});

  const std::vector<double> two{2.0};
  const auto s = eval_bundle(MirrorPotential::smoothed(3.0, 0.5), two);
  CHECK(s.grad[0] == doctest::Approx(5.0).epsilon(1e-14));
  CHECK(s.metric_diag[0] == doctest::Approx(4.5).epsilon(1e-14));
  const auto r = [](double t) { return oracle::r_smoothed(t, 3.0, 0.5); };
  CHECK(oracle::central_diff(r, 2.0, 1e-6) == doctest::Approx(5.0).epsilon(1e-8));
}

TEST_CASE("invalid potentials are rejected") {
  CHECK_THROWS_AS(MirrorPotential::hyperbolic(0.0), std::invalid_argument);
  CHECK_THROWS_AS(MirrorPotential::hyperbolic(-1.0), std::invalid_argument);
  CHECK_THROWS_AS(MirrorPotential::smoothed(1.5, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(MirrorPotential::smoothed(3.0, -1.0), std::invalid_argument);
  const std::vector<double> bad{1.0, std::nan("")};
  CHECK_THROWS(eval_bundle(MirrorPotential::euclidean(), bad));
  CHECK_THROWS(dual_of_grad(MirrorPotential::hyperbolic(1.0), bad));
  CHECK(MirrorPotential::hyperbolic(0.5).alpha() == 1.0);
  CHECK(MirrorPotential::smoothed(4.0, 0.5).alpha() == 4.0);
  CHECK(MirrorPotential::euclidean().alpha() == 2.0);
}

TEST_CASE("dual_of_grad closed forms") {
  const std::vector<double> zero{0.0, 0.0}, t34{3.0, 4.0};
  CHECK(dual_of_grad(MirrorPotential::hyperbolic(1.0), zero) == doctest::Approx(2.0));
  CHECK(dual_of_grad(MirrorPotential::hyperbolic(1.0), t34) == doctest::Approx(std::sqrt(10.0) + std::sqrt(17.0)));
  CHECK(dual_of_grad(MirrorPotential::smoothed(2.0, 0.0), t34) == doctest::Approx(12.5));
}

TEST_CASE("euclidean agrees with smoothed p=2 lambda=0") {
  std::mt19937_64 gen(7);
  const auto e = MirrorPotential::euclidean();
  const auto s = MirrorPotential::smoothed(2.0, 0.0);
  for (int k = 0; k < 100; ++k) {
    const auto th = random_theta(gen, 6);
    const auto be = eval_bundle(e, th), bs = eval_bundle(s, th);
    CHECK(std::abs(be.value - bs.value) <= 1e-12 * (1.0 + std::abs(be.value)));
    CHECK(std::abs(dual_of_grad(e, th) - dual_of_grad(s, th)) <= 1e-12 * (1.0 + dual_of_grad(e, th)));
    for (std::size_t i = 0; i < th.size(); ++i) {
      CHECK(std::abs(be.grad[i] - bs.grad[i]) <= 1e-12 * (1.0 + std::abs(be.grad[i])));
      CHECK(std::abs(be.metric_diag[i] - bs.metric_diag[i]) <= 1e-12);
    }
  }
}

TEST_CASE("property: Fenchel-Young, conjugate oracle, finite differences, round trips") {
  std::mt19937_64 gen(11);
  for (const auto& c : all_cases()) {
    CAPTURE(c.pot.describe());
    for (int k = 0; k < 60; ++k) {
      const auto th = random_theta(gen, 4);
      const auto b = eval_bundle(c.pot, th);
      double R = 0.0, inner = 0.0;
      for (std::size_t i = 0; i < th.size(); ++i) {
        R += c.r(th[i]);
        inner += th[i] * b.grad[i];
      }
      CHECK(std::abs(b.value - R) <= 1e-12 * (1.0 + std::abs(R)));
      const double Q = dual_of_grad(c.pot, th);
      CHECK(std::abs(inner - R - Q) <= 1e-10 * (1.0 + std::abs(R)));

      double Q_sup = 0.0;
      for (std::size_t i = 0; i < th.size(); ++i) Q_sup += oracle::conjugate(c.r, b.grad[i]);
      CHECK(rel(Q, Q_sup) <= 1e-6);

      for (std::size_t i = 0; i < th.size(); ++i) {
        const double h = 1e-6 * std::max(1.0, std::abs(th[i]));
        const double fd_grad = oracle::central_diff(c.r, th[i], h);
        CHECK(std::abs(fd_grad - b.grad[i]) <= 1e-5 * std::max(std::abs(b.grad[i]), 1e-3));
        const auto d = [&](double t) { return c.pot.derivative(t); };
        const double fd_metric = oracle::central_diff(d, th[i], h);
        CHECK(b.metric_diag[i] > 0.0);
        CHECK(std::abs(fd_metric - b.metric_diag[i]) <= 1e-5 * std::max(b.metric_diag[i], 1e-3));
      }

      const auto back = grad_inverse(c.pot, b.grad);
      for (std::size_t i = 0; i < th.size(); ++i) CHECK(rel(back[i], th[i]) <= 1e-9);
      const auto z = random_theta(gen, 4);
      const auto t2 = grad_inverse(c.pot, z);
      for (std::size_t i = 0; i < z.size(); ++i) CHECK(rel(c.pot.derivative(t2[i]), z[i]) <= 1e-9);

      CHECK(semihomogeneity_margin(c.pot, th) >= -1e-12);
    }
  }
}

TEST_CASE("grad_inverse examples") {
  CHECK(grad_inverse(MirrorPotential::hyperbolic(4.0), std::vector<double>{0.0})[0] == 0.0);
  CHECK(grad_inverse(MirrorPotential::euclidean(), std::vector<double>{3.0, 4.0}) == std::vector<double>{3.0, 4.0});
  const auto t = grad_inverse(MirrorPotential::smoothed(3.0, 0.5), std::vector<double>{5.0});
  CHECK(t[0] == doctest::Approx(2.0).epsilon(1e-12));
  const auto pot = MirrorPotential::smoothed(3.0, 0.0);
  for (double z : {1e-300, 1e-20, 1e-3, 1e3, 1e30}) {
    const double th = pot.inverse_derivative(z);
    CHECK(rel(pot.derivative(th), z) <= 1e-9);
  }
  CHECK(MirrorPotential::hyperbolic(1.0).inverse_derivative(0.1) == doctest::Approx(std::sinh(0.1)).epsilon(1e-15));
}

TEST_CASE("horizon examples and the small-eta limit") {
  CHECK(horizon(MirrorPotential::hyperbolic(0.3), std::vector<double>{3.0, -4.0}) == doctest::Approx(7.0));
  CHECK(horizon(MirrorPotential::smoothed(2.0, 5.0), std::vector<double>{3.0, 4.0}) == doctest::Approx(5.0));
  CHECK(horizon(MirrorPotential::smoothed(3.0, 1.0), std::vector<double>{1.0, 1.0}) ==
        doctest::Approx(std::pow(2.0, 2.0 / 3.0)));

  std::mt19937_64 gen(3);
  for (const auto& c : all_cases()) {
    CAPTURE(c.pot.describe());
    const double alpha = c.pot.alpha();
    // For p = 2 with lambda > 0 both terms share the same degree and the limit
    // is the upper sandwich constant times the horizon.
    const bool p2_smoothed = c.pot.kind() == PotentialKind::SmoothedHomogeneous && c.pot.p() == 2.0;
    const double limit_scale = p2_smoothed ? std::sqrt(1.0 + c.pot.lambda()) : 1.0;
    for (int k = 0; k < 20; ++k) {
      auto th = random_theta(gen, 5);
      const double phi = horizon(c.pot, th) * limit_scale;
      double prev = INFINITY;
      for (double eta : {1e-2, 1e-4, 1e-6}) {
        std::vector<double> s(th.size());
        for (std::size_t i = 0; i < th.size(); ++i) s[i] = th[i] / eta;
        const double lim = eta * std::pow(alpha * dual_of_grad(c.pot, s), 1.0 / alpha);
        const double err = std::abs(lim - phi) / phi;
        CHECK(err <= prev * (1.0 + 1e-9) + 1e-13);
        prev = err;
      }
      CHECK(prev <= 1e-3);
    }
  }
}

TEST_CASE("horizon gap bounds") {
  auto b = horizon_gap_bounds(MirrorPotential::hyperbolic(0.01), 4);
  CHECK(b.c == 1.0);
  CHECK(b.a == doctest::Approx(0.4));
  b = horizon_gap_bounds(MirrorPotential::euclidean(), 10);
  CHECK(b.c == 1.0);
  CHECK(b.a == 0.0);
  b = horizon_gap_bounds(MirrorPotential::smoothed(2.0, 2.0), 3);
  CHECK(b.c == doctest::Approx(std::sqrt(3.0)));
  CHECK(b.a == doctest::Approx(std::sqrt(6.0)));

  std::mt19937_64 gen(5);
  for (const auto& c : all_cases()) {
    CAPTURE(c.pot.describe());
    for (int k = 0; k < 50; ++k) {
      auto th = random_theta(gen, 6);
      const double scale = std::pow(10.0, std::uniform_real_distribution<double>(-3.0, 3.0)(gen));
      for (auto& x : th) x *= scale;
      const auto hb = horizon_gap_bounds(c.pot, th.size());
      const double phi = horizon(c.pot, th);
      const double mid = std::pow(c.pot.alpha() * dual_of_grad(c.pot, th), 1.0 / c.pot.alpha());
      CHECK(phi <= mid * (1.0 + 1e-12));
      CHECK(mid <= (hb.c * phi + hb.a) * (1.0 + 1e-12));
    }
  }
}

TEST_CASE("semihomogeneity examples") {
  CHECK(semihomogeneity_margin(MirrorPotential::euclidean(), std::vector<double>{3.0, 4.0}) ==
        doctest::Approx(0.0));
  CHECK(semihomogeneity_margin(MirrorPotential::hyperbolic(1.0), std::vector<double>{1.0}) ==
        doctest::Approx(1.0 / std::sqrt(2.0)));
  CHECK(semihomogeneity_margin(MirrorPotential::smoothed(4.0, 2.0), std::vector<double>{1.0}) ==
        doctest::Approx(2.0));
}

TEST_CASE("stable asinh matches std::asinh and survives huge arguments") {
  for (double x : {0.0, 1e-10, 0.5, 3.0, 1e5, 1e7, -2.0}) CHECK(stable_asinh(x) == doctest::Approx(std::asinh(x)));
  CHECK(std::isfinite(stable_asinh(1e300)));
  CHECK(stable_asinh(1e300) == doctest::Approx(std::log(2e300 / 1e0)).epsilon(1e-12));
}

TEST_CASE("half horizon squared gradient") {
  const std::vector<double> t{1.0, -2.0, 0.0};
  const auto g = half_horizon_sq_grad(MirrorPotential::hyperbolic(1.0), t);
  CHECK(g == std::vector<double>{3.0, -3.0, 0.0});
  // finite differences of 1/2 phi^2 for smoothed p=3
  const auto pot = MirrorPotential::smoothed(3.0, 1.0);
  const std::vector<double> u{0.7, -1.3, 0.4};
  const auto gs = half_horizon_sq_grad(pot, u);
  for (std::size_t i = 0; i < u.size(); ++i) {
    const auto f = [&](double x) {
      auto v = u;
      v[i] = x;
      const double phi = std::pow(2.0, 1.0 / 3.0) *
                         std::cbrt(std::pow(std::abs(v[0]), 3) + std::pow(std::abs(v[1]), 3) + std::pow(std::abs(v[2]), 3));
      return 0.5 * phi * phi;
    };
    CHECK(oracle::central_diff(f, u[i], 1e-6) == doctest::Approx(gs[i]).epsilon(1e-7));
  }
}
