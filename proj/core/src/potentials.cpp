#include "mirrorflow/potentials.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mirrorflow/errors.hpp"

namespace mirrorflow {

namespace {

void require_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw std::domain_error(std::string(what) + ": non-finite input");
    }
  }
}

void require_same_size(std::size_t a, std::size_t b) {
  if (a != b) throw std::invalid_argument("output span size does not match input size");
}

}  // namespace

std::string_view to_string(PotentialKind kind) {
  switch (kind) {
    case PotentialKind::Euclidean: return "euclidean";
    case PotentialKind::HyperbolicEntropy: return "hyperbolic";
    case PotentialKind::SmoothedHomogeneous: return "smoothed";
  }
  return "unknown";
}

PotentialKind parse_potential_kind(std::string_view name) {
  if (name == "euclidean") return PotentialKind::Euclidean;
  if (name == "hyperbolic") return PotentialKind::HyperbolicEntropy;
  if (name == "smoothed") return PotentialKind::SmoothedHomogeneous;
  throw std::invalid_argument("unknown potential kind '" + std::string(name) +
                              "' (expected euclidean, hyperbolic or smoothed)");
}

MirrorPotential MirrorPotential::euclidean() { return {PotentialKind::Euclidean, 0.0, 2.0}; }

MirrorPotential MirrorPotential::hyperbolic(double lambda) {
  if (!std::isfinite(lambda) || !(lambda > 0.0)) {
    throw std::invalid_argument("hyperbolic entropy requires lambda > 0");
  }
  return {PotentialKind::HyperbolicEntropy, lambda, 0.0};
}

MirrorPotential MirrorPotential::smoothed(double p, double lambda) {
  if (!std::isfinite(p) || p < 2.0) {
    throw std::invalid_argument("smoothed homogeneous potential requires p >= 2");
  }
  if (!std::isfinite(lambda) || lambda < 0.0) {
    throw std::invalid_argument("smoothed homogeneous potential requires lambda >= 0");
  }
  return {PotentialKind::SmoothedHomogeneous, lambda, p};
}

double MirrorPotential::alpha() const noexcept {
  switch (kind_) {
    case PotentialKind::Euclidean: return 2.0;
    case PotentialKind::HyperbolicEntropy: return 1.0;
    case PotentialKind::SmoothedHomogeneous: return p_;
  }
  return 2.0;
}

double MirrorPotential::value(double t) const noexcept {
  switch (kind_) {
    case PotentialKind::Euclidean: return 0.5 * t * t;
    case PotentialKind::HyperbolicEntropy: {
      const double s = std::sqrt(lambda_);
      return t * stable_asinh(t / s) - std::hypot(t, s);
    }
    case PotentialKind::SmoothedHomogeneous:
      return std::pow(std::abs(t), p_) / p_ + 0.5 * lambda_ * t * t;
  }
  return 0.0;
}

double MirrorPotential::derivative(double t) const noexcept {
  switch (kind_) {
    case PotentialKind::Euclidean: return t;
    case PotentialKind::HyperbolicEntropy: return stable_asinh(t / std::sqrt(lambda_));
    case PotentialKind::SmoothedHomogeneous:
      return std::pow(std::abs(t), p_ - 2.0) * t + lambda_ * t;
  }
  return 0.0;
}

double MirrorPotential::curvature(double t) const noexcept {
  switch (kind_) {
    case PotentialKind::Euclidean: return 1.0;
    case PotentialKind::HyperbolicEntropy: return 1.0 / std::hypot(t, std::sqrt(lambda_));
    case PotentialKind::SmoothedHomogeneous:
      return (p_ - 1.0) * std::pow(std::abs(t), p_ - 2.0) + lambda_;
  }
  return 1.0;
}

double MirrorPotential::dual_at(double t) const noexcept {
  switch (kind_) {
    case PotentialKind::Euclidean: return 0.5 * t * t;
    case PotentialKind::HyperbolicEntropy: return std::hypot(t, std::sqrt(lambda_));
    case PotentialKind::SmoothedHomogeneous:
      return (p_ - 1.0) / p_ * std::pow(std::abs(t), p_) + 0.5 * lambda_ * t * t;
  }
  return 0.0;
}

double MirrorPotential::inverse_derivative(double z) const {
  switch (kind_) {
    case PotentialKind::Euclidean: return z;
    case PotentialKind::HyperbolicEntropy: return std::sqrt(lambda_) * std::sinh(z);
    case PotentialKind::SmoothedHomogeneous: break;
  }
  if (z == 0.0) return 0.0;
  const double target = std::abs(z);
  const double sign = z < 0.0 ? -1.0 : 1.0;
  if (p_ == 2.0) return z / (1.0 + lambda_);
  if (lambda_ == 0.0) return sign * std::pow(target, 1.0 / (p_ - 1.0));

  // g(t) = t^{p-1} + lambda t is increasing and convex on t >= 0, so Newton
  // started from an upper bound of the root decreases monotonically onto it.
  // Bisection takes over whenever a step leaves the bracket.
  const auto g = [&](double t) { return std::pow(t, p_ - 1.0) + lambda_ * t; };
  const auto dg = [&](double t) { return (p_ - 1.0) * std::pow(t, p_ - 2.0) + lambda_; };
  double lo = 0.0;
  double hi = 2.0 * std::max(target, std::pow(target, 1.0 / (p_ - 1.0))) / std::min(1.0, lambda_ + 1.0);
  hi = std::min({hi, target / lambda_, std::pow(target, 1.0 / (p_ - 1.0))});
  double t = hi;
  for (int iter = 0; iter < 200; ++iter) {
    const double residual = g(t) - target;
    if (residual == 0.0) return sign * t;
    if (residual > 0.0) {
      hi = t;
    } else {
      lo = t;
    }
    double next = t - residual / dg(t);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - t) <= 1e-13 * std::abs(next) || hi - lo <= 1e-14 * hi) {
      return sign * next;
    }
    t = next;
  }
  throw NumericalError("grad_inverse: root-find did not converge for z=" + std::to_string(z));
}

std::string MirrorPotential::describe() const {
  std::ostringstream os;
  os << to_string(kind_);
  if (kind_ == PotentialKind::HyperbolicEntropy) os << "(lambda=" << lambda_ << ")";
  if (kind_ == PotentialKind::SmoothedHomogeneous) os << "(p=" << p_ << ",lambda=" << lambda_ << ")";
  return os.str();
}

double stable_asinh(double x) noexcept {
  const double a = std::abs(x);
  double r;
  if (a > 1e8) {
    r = std::log(2.0 * a) + 0.25 / (a * a);
  } else {
    r = std::log1p(a + a * a / (1.0 + std::sqrt(1.0 + a * a)));
  }
  return std::copysign(r, x);
}

double lp_norm(std::span<const double> v, double p) noexcept {
  double scale = 0.0;
  for (double x : v) scale = std::max(scale, std::abs(x));
  if (scale == 0.0) return 0.0;
  if (p == 1.0) {
    double s = 0.0;
    for (double x : v) s += std::abs(x);
    return s;
  }
  double s = 0.0;
  if (p == 2.0) {
    for (double x : v) {
      const double r = x / scale;
      s += r * r;
    }
    return scale * std::sqrt(s);
  }
  for (double x : v) s += std::pow(std::abs(x) / scale, p);
  return scale * std::pow(s, 1.0 / p);
}

EvalBundle eval_bundle(const MirrorPotential& potential, std::span<const double> theta) {
  require_finite(theta, "eval_bundle");
  EvalBundle out;
  out.grad.resize(theta.size());
  out.metric_diag.resize(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    out.value += potential.value(theta[i]);
    out.grad[i] = potential.derivative(theta[i]);
    out.metric_diag[i] = potential.curvature(theta[i]);
  }
  return out;
}

double dual_of_grad(const MirrorPotential& potential, std::span<const double> theta) {
  require_finite(theta, "dual_of_grad");
  double q = 0.0;
  for (double t : theta) q += potential.dual_at(t);
  return q;
}

void grad_into(const MirrorPotential& potential, std::span<const double> theta, std::span<double> out) {
  require_same_size(theta.size(), out.size());
  for (std::size_t i = 0; i < theta.size(); ++i) out[i] = potential.derivative(theta[i]);
}

void grad_inverse(const MirrorPotential& potential, std::span<const double> z, std::span<double> out) {
  require_finite(z, "grad_inverse");
  require_same_size(z.size(), out.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = potential.inverse_derivative(z[i]);
}

std::vector<double> grad_inverse(const MirrorPotential& potential, std::span<const double> z) {
  std::vector<double> out(z.size());
  grad_inverse(potential, z, out);
  return out;
}

double horizon(const MirrorPotential& potential, std::span<const double> theta) {
  require_finite(theta, "horizon");
  switch (potential.kind()) {
    case PotentialKind::Euclidean: return lp_norm(theta, 2.0);
    case PotentialKind::HyperbolicEntropy: return lp_norm(theta, 1.0);
    case PotentialKind::SmoothedHomogeneous: {
      const double p = potential.p();
      return std::pow(p - 1.0, 1.0 / p) * lp_norm(theta, p);
    }
  }
  return 0.0;
}

HorizonBounds horizon_gap_bounds(const MirrorPotential& potential, std::size_t n) {
  const double lambda = potential.lambda();
  switch (potential.kind()) {
    case PotentialKind::Euclidean: return {1.0, 0.0};
    case PotentialKind::HyperbolicEntropy: return {1.0, static_cast<double>(n) * std::sqrt(lambda)};
    case PotentialKind::SmoothedHomogeneous: {
      const double p = potential.p();
      const double c = std::pow((p - 1.0 + 0.5 * p * lambda) / (p - 1.0), 1.0 / p);
      const double a = std::pow(0.5 * p * lambda * static_cast<double>(n), 1.0 / p);
      return {c, a};
    }
  }
  return {};
}

double semihomogeneity_margin(const MirrorPotential& potential, std::span<const double> theta) {
  require_finite(theta, "semihomogeneity_margin");
  double scaled_dual = 0.0;
  double local_norm_sq = 0.0;
  for (double t : theta) {
    scaled_dual += potential.dual_at(t);
    local_norm_sq += t * t * potential.curvature(t);
  }
  return potential.alpha() * scaled_dual - local_norm_sq;
}

std::vector<double> half_horizon_sq_grad(const MirrorPotential& potential, std::span<const double> theta) {
  std::vector<double> out(theta.size(), 0.0);
  switch (potential.kind()) {
    case PotentialKind::Euclidean:
      std::copy(theta.begin(), theta.end(), out.begin());
      break;
    case PotentialKind::HyperbolicEntropy: {
      const double l1 = lp_norm(theta, 1.0);
      for (std::size_t i = 0; i < theta.size(); ++i) {
        out[i] = theta[i] > 0.0 ? l1 : (theta[i] < 0.0 ? -l1 : 0.0);
      }
      break;
    }
    case PotentialKind::SmoothedHomogeneous: {
      const double p = potential.p();
      const double norm = lp_norm(theta, p);
      if (norm == 0.0) break;
      // (p-1)^{2/p} |theta|_p^{2-p} |t|^{p-2} t, written in normalized form
      const double lead = std::pow(p - 1.0, 2.0 / p) * norm;
      for (std::size_t i = 0; i < theta.size(); ++i) {
        const double r = theta[i] / norm;
        out[i] = lead * std::pow(std::abs(r), p - 2.0) * r;
      }
      break;
    }
  }
  return out;
}

}  // namespace mirrorflow
