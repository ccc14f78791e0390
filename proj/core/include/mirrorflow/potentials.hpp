#pragma once

// Separable mirror potentials R(theta) = sum_i r(theta_i) and the closed forms
// of their duals Q(grad R(theta)), metrics and horizon functions.

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mirrorflow {

enum class PotentialKind { Euclidean, HyperbolicEntropy, SmoothedHomogeneous };

std::string_view to_string(PotentialKind kind);
PotentialKind parse_potential_kind(std::string_view name);

/// A coordinate-separable, strictly convex mirror potential.
///
/// The asymptotic homogeneity degree alpha is derived from the kind (1 for the
/// hyperbolic entropy, p for the smoothed homogeneous potential, 2 for the
/// Euclidean potential) and cannot be set independently.
class MirrorPotential {
 public:
  /// R(theta) = 1/2 |theta|^2.
  static MirrorPotential euclidean();
  /// R(theta) = sum theta asinh(theta/sqrt(lambda)) - sqrt(theta^2 + lambda); lambda > 0.
  static MirrorPotential hyperbolic(double lambda);
  /// R(theta) = (1/p)|theta|_p^p + (lambda/2)|theta|_2^2; p >= 2, lambda >= 0.
  static MirrorPotential smoothed(double p, double lambda);

  PotentialKind kind() const noexcept { return kind_; }
  double lambda() const noexcept { return lambda_; }
  /// Exponent p. 2 for Euclidean, unused (0) for the hyperbolic entropy.
  double p() const noexcept { return p_; }
  double alpha() const noexcept;

  // Per-coordinate pieces. Inputs are assumed finite.
  double value(double t) const noexcept;      // r(t)
  double derivative(double t) const noexcept; // r'(t)
  double curvature(double t) const noexcept;  // r''(t) > 0 away from the degenerate smoothed case
  double dual_at(double t) const noexcept;    // Q(r'(t))
  /// Solves r'(t) = z. Throws NumericalError if the root-find fails.
  double inverse_derivative(double z) const;

  std::string describe() const;

  friend bool operator==(const MirrorPotential&, const MirrorPotential&) = default;

 private:
  MirrorPotential(PotentialKind kind, double lambda, double p) : kind_(kind), lambda_(lambda), p_(p) {}

  PotentialKind kind_;
  double lambda_;
  double p_;
};

struct EvalBundle {
  double value = 0.0;
  std::vector<double> grad;
  std::vector<double> metric_diag;
};

/// Multiplicative/additive constants of phi <= (alpha Q)^{1/alpha} <= c phi + a.
struct HorizonBounds {
  double c = 1.0;
  double a = 0.0;
};

EvalBundle eval_bundle(const MirrorPotential& potential, std::span<const double> theta);

/// Q(grad R(theta)) by closed form.
double dual_of_grad(const MirrorPotential& potential, std::span<const double> theta);

std::vector<double> grad_inverse(const MirrorPotential& potential, std::span<const double> z);
void grad_inverse(const MirrorPotential& potential, std::span<const double> z, std::span<double> out);
void grad_into(const MirrorPotential& potential, std::span<const double> theta, std::span<double> out);

/// phi_alpha(theta): |theta|_1, (p-1)^{1/p}|theta|_p or |theta|_2.
double horizon(const MirrorPotential& potential, std::span<const double> theta);

HorizonBounds horizon_gap_bounds(const MirrorPotential& potential, std::size_t n);

/// alpha Q(grad R(theta)) - |theta|^2_{hess R}; nonnegative for every supported kind.
double semihomogeneity_margin(const MirrorPotential& potential, std::span<const double> theta);

/// Gradient of (1/2) phi_alpha^2 with sign(0) = 0 for the L1 case.
std::vector<double> half_horizon_sq_grad(const MirrorPotential& potential, std::span<const double> theta);

// Numerically robust helpers shared with the tests.
double stable_asinh(double x) noexcept;
double lp_norm(std::span<const double> v, double p) noexcept;

}  // namespace mirrorflow
