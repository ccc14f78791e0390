#include "mirrorflow/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "mirrorflow/quadrature.hpp"

namespace mirrorflow {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::span<const double> view(const Matrix& w) { return {w.data(), static_cast<std::size_t>(w.size())}; }
std::span<double> view(Matrix& w) { return {w.data(), static_cast<std::size_t>(w.size())}; }
std::span<const double> view(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

void check_depth(const PotentialSet& potentials, const Params& theta) {
  if (potentials.size() != theta.layers.size()) {
    throw std::invalid_argument("potential list has " + std::to_string(potentials.size()) +
                                " entries, params have " + std::to_string(theta.layers.size()) + " layers");
  }
}

bool identical(const PotentialSet& potentials) {
  return std::all_of(potentials.begin(), potentials.end(),
                     [&](const MirrorPotential& p) { return p == potentials.front(); });
}

double metric_norm_sq(const Params& metric, const Params& v) {
  double s = 0.0;
  for (std::size_t l = 0; l < v.layers.size(); ++l) {
    s += (metric.layers[l].array() * v.layers[l].array().square()).sum();
  }
  return s;
}

double metric_inner(const Params& metric, const Params& a, const Params& b) {
  double s = 0.0;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    s += (metric.layers[l].array() * a.layers[l].array() * b.layers[l].array()).sum();
  }
  return s;
}

double kkt_constant(const MirrorPotential& p) {
  // Rescales the multipliers so exact KKT points of the quadratic smoothed
  // potential give zero stationarity residual.
  if (p.kind() == PotentialKind::SmoothedHomogeneous && p.p() == 2.0) return 1.0 / (1.0 + p.lambda());
  return 1.0;
}

}  // namespace

PotentialSet uniform_potentials(const MirrorPotential& potential, int depth) {
  return PotentialSet(static_cast<std::size_t>(depth), potential);
}

bool same_geometry(const PotentialSet& potentials) {
  if (potentials.empty()) return false;
  const auto& first = potentials.front();
  return std::all_of(potentials.begin(), potentials.end(), [&](const MirrorPotential& p) {
    return p.kind() == first.kind() && p.p() == first.p();
  });
}

Params dual_params(const PotentialSet& potentials, const Params& theta) {
  check_depth(potentials, theta);
  Params z = theta.zeros_like();
  for (std::size_t l = 0; l < theta.layers.size(); ++l) {
    grad_into(potentials[l], view(theta.layers[l]), view(z.layers[l]));
  }
  return z;
}

Params primal_from_dual(const PotentialSet& potentials, const Params& dual) {
  check_depth(potentials, dual);
  Params theta = dual.zeros_like();
  for (std::size_t l = 0; l < dual.layers.size(); ++l) {
    grad_inverse(potentials[l], view(dual.layers[l]), view(theta.layers[l]));
  }
  return theta;
}

Params metric_params(const PotentialSet& potentials, const Params& theta) {
  check_depth(potentials, theta);
  Params m = theta.zeros_like();
  for (std::size_t l = 0; l < theta.layers.size(); ++l) {
    const auto& p = potentials[l];
    m.layers[l] = theta.layers[l].unaryExpr([&](double t) { return p.curvature(t); });
  }
  return m;
}

std::vector<double> layer_duals(const PotentialSet& potentials, const Params& theta) {
  check_depth(potentials, theta);
  std::vector<double> q(theta.layers.size());
  for (std::size_t l = 0; l < theta.layers.size(); ++l) q[l] = dual_of_grad(potentials[l], view(theta.layers[l]));
  return q;
}

std::vector<double> balance_residuals(const PotentialSet& potentials, const Params& theta) {
  if (theta.layers.size() < 2) throw std::invalid_argument("balance_residuals needs at least two layers");
  const auto q = layer_duals(potentials, theta);
  std::vector<double> out(q.size() - 1);
  for (std::size_t i = 0; i + 1 < q.size(); ++i) out[i] = q[i] - q[i + 1];
  return out;
}

double balance_drift(const std::vector<double>& now, const std::vector<double>& initial) {
  if (now.size() != initial.size()) throw std::invalid_argument("balance_drift: length mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < now.size(); ++i) m = std::max(m, std::abs(now[i] - initial[i]));
  return m;
}

MarginReport margin_report(const PotentialSet& potentials, const HomogeneousNet& net, const Params& theta,
                           const LossGrad& eval, std::size_t K, const MarginOptions& options) {
  check_depth(potentials, theta);
  const int L = net.depth();
  MarginReport r;
  r.q_min = eval.margins.q_min;
  r.log_loss = eval.log_loss;

  const auto duals = layer_duals(potentials, theta);
  const double Q = std::accumulate(duals.begin(), duals.end(), 0.0);
  if (!(Q > 0.0) || !std::isfinite(Q)) throw std::domain_error("margin undefined: Q(grad R(theta)) = 0");

  if (same_geometry(potentials)) {
    const double alpha = potentials.front().alpha();
    r.q_scale = std::pow(alpha * Q, L / alpha);
    r.q_margin = r.q_min / r.q_scale;
    r.q_soft_margin = -r.log_loss / r.q_scale;
    r.gap_bound = std::log(static_cast<double>(K)) / r.q_scale;
  } else {
    r.q_scale = r.q_margin = r.q_soft_margin = r.gap_bound = kNaN;
  }

  const Vector flat = theta.flatten();
  const auto fv = view(flat);
  r.lk_margins.l1 = r.q_min / std::pow(lp_norm(fv, 1.0), L);
  r.lk_margins.l2 = r.q_min / std::pow(lp_norm(fv, 2.0), L);
  r.lk_margins.lp = r.q_min / std::pow(lp_norm(fv, options.p), L);
  if (options.layerwise) {
    LkMargins lw{r.q_min, r.q_min, r.q_min};
    for (const auto& w : theta.layers) {
      lw.l1 /= lp_norm(view(w), 1.0);
      lw.l2 /= lp_norm(view(w), 2.0);
      lw.lp /= lp_norm(view(w), options.p);
    }
    r.lk_layerwise = lw;
  }

  r.horizon_margin = same_geometry(potentials) ? r.q_min / std::pow(horizon(potentials.front(), fv), L) : kNaN;

  double denom = 1.0;
  for (std::size_t l = 0; l < duals.size(); ++l) {
    const double a = potentials[l].alpha();
    denom *= std::pow(a * duals[l], 1.0 / a);
  }
  r.multi_q_margin = r.q_min / denom;
  return r;
}

MarginReport margin_report(const PotentialSet& potentials, const HomogeneousNet& net, const Params& theta,
                           const Dataset& data, const MarginOptions& options) {
  return margin_report(potentials, net, theta, net.loss_and_grad(theta, data), data.size(), options);
}

AngleReport angle_report(const PotentialSet& potentials, const Params& theta, const Params& velocity) {
  const Params metric = metric_params(potentials, theta);
  const double theta_sq = metric_norm_sq(metric, theta);
  const double v_sq = metric_norm_sq(metric, velocity);
  const double cross = metric_inner(metric, theta, velocity);
  AngleReport a;
  const double denom = std::sqrt(theta_sq) * std::sqrt(v_sq);
  a.beta = denom > 0.0 ? cross / denom : kNaN;

  // Tangential part of the velocity, v - (<theta, v>_M / |theta|_M^2) theta.
  double tangential_sq = v_sq;
  if (theta_sq > 0.0) {
    const double c = cross / theta_sq;
    tangential_sq = 0.0;
    for (std::size_t l = 0; l < theta.layers.size(); ++l) {
      tangential_sq +=
          (metric.layers[l].array() * (velocity.layers[l].array() - c * theta.layers[l].array()).square()).sum();
    }
  }
  double Q = 0.0;
  for (double q : layer_duals(potentials, theta)) Q += q;
  a.e_tan = Q > 0.0 ? tangential_sq / Q : kNaN;
  return a;
}

KKTReport kkt_report(const PotentialSet& potentials, const HomogeneousNet& net, const Params& theta,
                     const LossGrad& eval, const std::optional<Params>& velocity) {
  check_depth(potentials, theta);
  const Params metric = metric_params(potentials, theta);

  // M^{-1} grad_hat, the flow direction up to the factor exp(log_loss).
  Params direction = eval.grad_hat;
  for (std::size_t l = 0; l < direction.layers.size(); ++l) {
    direction.layers[l].array() /= metric.layers[l].array();
  }

  KKTReport r;
  if (velocity) {
    const auto a = angle_report(potentials, theta, *velocity);
    r.beta = a.beta;
    r.e_tan = a.e_tan;
  } else {
    const auto a = angle_report(potentials, theta, direction.scaled(std::exp(eval.log_loss)));
    r.beta = a.beta;
    r.e_tan = a.e_tan;
  }

  const double q_min = eval.margins.q_min;
  r.feasible = q_min > 0.0;
  r.heuristic = potentials.front().kind() == PotentialKind::HyperbolicEntropy;
  if (!r.feasible || !same_geometry(potentials)) {
    r.epsilon = r.delta = kNaN;
    return r;
  }

  const int L = net.depth();
  const auto& P = potentials.front();
  const double alpha = P.alpha();
  double Q = 0.0;
  for (double q : layer_duals(potentials, theta)) Q += q;

  const double theta_m = std::sqrt(metric_norm_sq(metric, theta));
  const double dir_m = std::sqrt(metric_norm_sq(metric, direction));
  if (!(dir_m > 0.0)) {
    r.epsilon = r.delta = kNaN;
    return r;
  }
  const double scale = kkt_constant(P) * std::pow(alpha * Q, 2.0 / alpha - 1.0) * std::pow(q_min, 1.0 - 2.0 / L) *
                       theta_m / dir_m;
  r.multipliers = scale * eval.softmax;

  const Vector theta_tilde = theta.flatten() / std::pow(q_min, 1.0 / L);
  const auto half_sq = half_horizon_sq_grad(P, view(theta_tilde));
  const Vector combo = eval.grad_hat.flatten() * (scale / std::pow(q_min, 1.0 - 1.0 / L));
  double eps_sq = 0.0;
  for (Eigen::Index i = 0; i < combo.size(); ++i) {
    const double d = half_sq[static_cast<std::size_t>(i)] - combo(i);
    eps_sq += d * d;
  }
  r.epsilon = std::sqrt(eps_sq);

  r.delta = 0.0;
  const Vector& q = eval.margins.q;
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    r.delta = std::max(r.delta, r.multipliers(i) * (q(i) / q_min - 1.0));
  }
  return r;
}

KKTReport kkt_report(const PotentialSet& potentials, const HomogeneousNet& net, const Params& theta,
                     const Dataset& data, const std::optional<Params>& velocity) {
  return kkt_report(potentials, net, theta, net.loss_and_grad(theta, data), velocity);
}

AlignmentGap alignment_gap(const MirrorPotential& potential, std::span<const double> theta, std::size_t n) {
  const double alpha = potential.alpha();
  const double s = std::pow(alpha * dual_of_grad(potential, theta), 1.0 / alpha);
  const auto hb = horizon_gap_bounds(potential, n);
  AlignmentGap g;
  g.gap = (s - horizon(potential, theta)) / s;
  g.bound = (hb.c - 1.0) + hb.a / s;
  return g;
}

AlignmentGap alignment_gap(const PotentialSet& potentials, const Params& theta) {
  check_depth(potentials, theta);
  if (!identical(potentials)) return {kNaN, kNaN};
  const Vector flat = theta.flatten();
  return alignment_gap(potentials.front(), view(flat), static_cast<std::size_t>(flat.size()));
}

TwoLayerReport two_layer_report(const Vector& a, const Matrix& w, double alpha, const TwoLayerOptions& options) {
  if (a.size() != w.rows()) throw std::invalid_argument("two_layer_report: a and w disagree on the neuron count");
  if (!(alpha == 1.0 || alpha >= 2.0)) throw std::invalid_argument("two_layer_report: alpha must be 1 or >= 2");
  const Eigen::Index n = a.size();
  TwoLayerReport r;
  r.a_tilde = Vector::Zero(n);
  r.w_tilde = Matrix::Zero(w.rows(), w.cols());
  for (Eigen::Index j = 0; j < n; ++j) {
    const Vector row = w.row(j).transpose();
    const double norm = lp_norm(view(row), alpha);
    if (norm == 0.0) continue;
    r.a_tilde(j) = a(j) * norm;
    r.w_tilde.row(j) = w.row(j) / norm;
  }
  r.objective = r.a_tilde.array().abs().pow(alpha / 2.0).sum();
  const double top = n > 0 ? r.a_tilde.cwiseAbs().maxCoeff() : 0.0;
  r.active_count = 0;
  if (top > 0.0) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (std::abs(r.a_tilde(j)) > options.tau * top) ++r.active_count;
    }
  }
  if (options.potentials) {
    const auto& [p_in, p_out] = *options.potentials;
    const auto balance = [&](const Vector& av, const Matrix& wm) {
      Vector b(n);
      for (Eigen::Index j = 0; j < n; ++j) {
        const Vector row = wm.row(j).transpose();
        const double aj = av(j);
        b(j) = dual_of_grad(p_out, std::span<const double>(&aj, 1)) - dual_of_grad(p_in, view(row));
      }
      return b;
    };
    r.neuron_balance = balance(a, w);
    if (options.initial) r.neuron_balance -= balance(options.initial->first, options.initial->second);
  }
  return r;
}

TwoLayerReport two_layer_report(const Params& theta, double alpha, const TwoLayerOptions& options) {
  if (theta.layers.size() != 2) throw std::invalid_argument("two_layer_report requires a 2-layer network");
  const Vector a = theta.layers[1].row(0).transpose();
  return two_layer_report(a, theta.layers[0], alpha, options);
}

ReparamResult reparam_compare(double lambda, const LossGradient& grad, const Vector& theta0, double eta,
                              std::size_t steps) {
  if (!(lambda > 0.0)) throw std::invalid_argument("reparam_compare requires lambda > 0");
  const double s = std::sqrt(lambda);
  Vector theta_a = theta0;
  Vector u = ((s + (lambda + 4.0 * theta0.array().square()).sqrt()) / 2.0).sqrt().matrix();
  Vector v = theta0.cwiseQuotient(u);
  ReparamResult r;
  const auto track = [&] {
    r.deviation = std::max(r.deviation, (theta_a - u.cwiseProduct(v)).cwiseAbs().maxCoeff());
    r.conservation_drift =
        std::max(r.conservation_drift, (u.array().square() - v.array().square() - s).abs().maxCoeff());
  };
  track();
  for (std::size_t k = 0; k < steps; ++k) {
    const Vector ga = grad(theta_a);
    theta_a.array() -= eta * (4.0 * theta_a.array().square() + lambda).sqrt() * ga.array();
    const Vector gb = grad(u.cwiseProduct(v));
    const Vector u_next = u - eta * v.cwiseProduct(gb);
    v -= eta * u.cwiseProduct(gb);
    u = u_next;
    track();
  }
  return r;
}

ReparamResult reparam_compare(double lambda, const Dataset& data, double eta, std::size_t steps) {
  const Matrix& X = data.inputs;
  const Vector& y = data.labels;
  const LossGradient grad = [&](const Vector& theta) {
    const Vector q = y.cwiseProduct(X.transpose() * theta);
    const Vector w = (-q.array()).exp().matrix().cwiseProduct(y);
    return Vector(-(X * w));
  };
  return reparam_compare(lambda, grad, Vector::Zero(X.rows()), eta, steps);
}

Matrix ntk_gram(const HomogeneousNet& net, const Params& theta, const Dataset& data) {
  const Matrix J = net.jacobian(theta, data.inputs);
  Matrix G = J.transpose() * J;
  return 0.5 * (G + G.transpose());
}

Params prune_layerwise(const Params& theta, double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw std::invalid_argument("prune fraction must lie in [0, 1)");
  Params out = theta;
  for (auto& w : out.layers) {
    const auto n = static_cast<std::size_t>(w.size());
    const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
    if (k == 0) continue;
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    double* data = w.data();
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return std::abs(data[a]) < std::abs(data[b]); });
    for (std::size_t i = 0; i < k; ++i) data[idx[i]] = 0.0;
  }
  return out;
}

double sign_accuracy(const HomogeneousNet& net, const Params& theta, const Dataset& data) {
  const Vector q = data.labels.cwiseProduct(net.forward_batch(theta, data.inputs));
  return static_cast<double>((q.array() > 0.0).count()) / static_cast<double>(q.size());
}

std::vector<PrunePoint> prune_eval(const HomogeneousNet& net, const Params& theta, const Dataset& data,
                                   const std::vector<double>& fractions) {
  std::vector<PrunePoint> out;
  out.reserve(fractions.size());
  for (double f : fractions) out.push_back({f, sign_accuracy(net, prune_layerwise(theta, f), data)});
  return out;
}

const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> cols = {
      "step",           "time",           "eta_eff",      "log_loss",   "q_min",
      "q_soft_margin",  "q_margin",       "margin_l1",    "margin_l2",  "margin_lp",
      "horizon_margin", "multi_q_margin", "balance_drift_max", "beta", "e_tan",
      "kkt_eps",        "kkt_delta",      "alignment_gap", "active_neurons", "objective_alpha_half"};
  return cols;
}

MetricsRecord make_record(const RecordContext& ctx, const Params& theta, const LossGrad& eval,
                          const std::optional<Params>& velocity) {
  MetricsRecord rec;
  rec.log_loss = eval.log_loss;
  rec.q_min = eval.margins.q_min;

  const auto m = margin_report(ctx.potentials, ctx.net, theta, eval, ctx.data.size(), ctx.margins);
  rec.q_soft_margin = m.q_soft_margin;
  rec.q_margin = m.q_margin;
  rec.margin_l1 = m.lk_margins.l1;
  rec.margin_l2 = m.lk_margins.l2;
  rec.margin_lp = m.lk_margins.lp;
  rec.horizon_margin = m.horizon_margin;
  rec.multi_q_margin = m.multi_q_margin;
  rec.gap_bound = m.gap_bound;
  rec.q_scale = m.q_scale;

  const auto duals = layer_duals(ctx.potentials, theta);
  rec.total_dual = std::accumulate(duals.begin(), duals.end(), 0.0);
  if (theta.layers.size() >= 2 && !ctx.initial_balance.empty()) {
    rec.balance_drift_max = balance_drift(balance_residuals(ctx.potentials, theta), ctx.initial_balance);
  }

  const auto kkt = kkt_report(ctx.potentials, ctx.net, theta, eval, velocity);
  rec.beta = kkt.beta;
  rec.e_tan = kkt.e_tan;
  rec.kkt_eps = kkt.epsilon;
  rec.kkt_delta = kkt.delta;

  const auto align = alignment_gap(ctx.potentials, theta);
  rec.alignment_gap = align.gap;
  rec.alignment_bound = align.bound;

  rec.active_neurons = -1;
  rec.objective_alpha_half = kNaN;
  if (theta.layers.size() == 2 && same_geometry(ctx.potentials)) {
    const double alpha = ctx.potentials.front().alpha();
    TwoLayerOptions opts;
    opts.tau = ctx.tau;
    rec.active_neurons = two_layer_report(theta, alpha, opts).active_count;
    if (rec.q_min > 0.0) {
      rec.objective_alpha_half = two_layer_report(theta.scaled(1.0 / std::sqrt(rec.q_min)), alpha, opts).objective;
    }
  }
  return rec;
}

double ls_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("ls_slope needs >= 2 paired samples");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx == 0.0) throw std::invalid_argument("ls_slope: x has no spread");
  return sxy / sxx;
}

double g_integral(double z0, double z1, double a) {
  if (z1 < z0) return -g_integral(z1, z0, a);
  if (!(z0 > 0.0)) throw std::domain_error("g_integral: lower limit must satisfy ln u > 0");
  const auto f = [a](double z) { return std::pow(z, a - 2.0) * std::exp(z); };
  // Geometric panels below z = 1 where the power may be singular, unit panels above.
  double total = 0.0;
  double lo = z0;
  while (lo < z1) {
    const double hi = std::min(z1, lo < 1.0 ? std::min(2.0 * lo, 1.0) : lo + 1.0);
    total += adaptive_simpson(f, lo, hi, 1e-8);
    lo = hi;
  }
  return total;
}

RateReport rate_report(const std::vector<MetricsRecord>& trajectory, int L, double alpha, double slack) {
  std::vector<const MetricsRecord*> post;
  for (const auto& r : trajectory) {
    if (post.empty() && !(r.q_min > 0.0 && r.log_loss < 0.0 && r.time > 0.0)) continue;
    post.push_back(&r);
  }
  if (post.size() < 100) {
    throw std::invalid_argument("rate_report: insufficient trajectory span (" + std::to_string(post.size()) +
                                " post-separation records, need 100)");
  }
  const double t0 = post.front()->time;
  const double t_end = post.back()->time;
  if (!(t_end >= 100.0 * t0)) {
    throw std::invalid_argument("rate_report: insufficient trajectory span (time covers less than two decades)");
  }

  RateReport rep;
  rep.t0 = t0;
  std::vector<double> x;
  std::vector<double> y;
  for (const auto* r : post) {
    if (r->time >= t_end / 10.0) {
      x.push_back(std::log(r->time));
      y.push_back(-r->log_loss);
    }
    if (r->time > 1.0) {
      rep.sample_time.push_back(r->time);
      rep.q_over_logt.push_back((r->q_min / r->q_margin) / std::log(r->time));
    }
  }
  rep.loss_slope = ls_slope(x, y);

  const double a = alpha / L;
  const double rate = (static_cast<double>(L) * L / alpha) * std::pow(post.front()->q_soft_margin, a);
  double G = 0.0;
  double z_prev = -post.front()->log_loss;
  rep.g_bound_ok = true;
  rep.g_ratio_min = std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k < post.size(); ++k) {
    const double z = -post[k]->log_loss;
    if (!(z > 0.0)) {
      rep.g_bound_ok = false;
      continue;
    }
    G += g_integral(z_prev, z, a);
    z_prev = z;
    const double need = rate * (post[k]->time - t0);
    if (need > 0.0) {
      rep.g_ratio_min = std::min(rep.g_ratio_min, G / need);
      if (G < (1.0 - slack) * need) rep.g_bound_ok = false;
    }
  }
  return rep;
}

}  // namespace mirrorflow
