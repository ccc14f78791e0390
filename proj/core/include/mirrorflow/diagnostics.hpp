#pragma once

// Quantities predicted by the implicit-bias theory of mirror flows: balance
// residuals, margins, approximate KKT residuals, rates, alignment and sparsity.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mirrorflow/data.hpp"
#include "mirrorflow/network.hpp"
#include "mirrorflow/potentials.hpp"

namespace mirrorflow {

/// One potential per layer, in the layer order of Params.
using PotentialSet = std::vector<MirrorPotential>;

PotentialSet uniform_potentials(const MirrorPotential& potential, int depth);

/// True when every layer shares kind and p, so alpha and the horizon are global.
bool same_geometry(const PotentialSet& potentials);

// Layerwise maps between primal weights and dual variables.
Params dual_params(const PotentialSet& potentials, const Params& theta);
Params primal_from_dual(const PotentialSet& potentials, const Params& dual);
Params metric_params(const PotentialSet& potentials, const Params& theta);
/// Q_i(grad R_i(W_i)) for every layer.
std::vector<double> layer_duals(const PotentialSet& potentials, const Params& theta);

/// Entry i = Q_i(grad R_i(W_i)) - Q_{i+1}(grad R_{i+1}(W_{i+1})); length L-1.
std::vector<double> balance_residuals(const PotentialSet& potentials, const Params& theta);
double balance_drift(const std::vector<double>& now, const std::vector<double>& initial);

struct MarginOptions {
  double p = 3.0;          // exponent of the third L_k margin
  bool layerwise = false;  // also report q_min / prod_i |W_i|_k
};

struct LkMargins {
  double l1 = 0.0;
  double l2 = 0.0;
  double lp = 0.0;
};

struct MarginReport {
  double q_margin = 0.0;
  double q_soft_margin = 0.0;
  double gap_bound = 0.0;
  LkMargins lk_margins;
  std::optional<LkMargins> lk_layerwise;
  double horizon_margin = 0.0;
  double multi_q_margin = 0.0;
  /// (alpha Q(grad R(theta)))^{L/alpha}, the normalizer of q_margin.
  double q_scale = 0.0;
  double q_min = 0.0;
  double log_loss = 0.0;
};

/// Margins from an already evaluated loss. Throws std::domain_error when Q vanishes.
MarginReport margin_report(const PotentialSet& potentials, const HomogeneousNet& net, const Params& theta,
                           const LossGrad& eval, std::size_t K, const MarginOptions& options = {});
MarginReport margin_report(const PotentialSet& potentials, const HomogeneousNet& net, const Params& theta,
                           const Dataset& data, const MarginOptions& options = {});

struct KKTReport {
  double epsilon = 0.0;
  double delta = 0.0;
  Vector multipliers;
  double beta = 0.0;
  double e_tan = 0.0;
  bool feasible = false;   // q_min > 0; epsilon, delta and multipliers are NaN/empty otherwise
  bool heuristic = false;  // epsilon for a horizon without a valid KKT characterization
};

/// `velocity` is the applied update direction; when absent the continuous
/// flow direction -(hess R)^{-1} grad L is used.
KKTReport kkt_report(const PotentialSet& potentials, const HomogeneousNet& net, const Params& theta,
                     const LossGrad& eval, const std::optional<Params>& velocity = std::nullopt);
KKTReport kkt_report(const PotentialSet& potentials, const HomogeneousNet& net, const Params& theta,
                     const Dataset& data, const std::optional<Params>& velocity = std::nullopt);

/// beta and E_tan of a velocity field at theta in the local metric.
struct AngleReport {
  double beta = 0.0;
  double e_tan = 0.0;
};
AngleReport angle_report(const PotentialSet& potentials, const Params& theta, const Params& velocity);

struct AlignmentGap {
  double gap = 0.0;
  double bound = 0.0;
};

AlignmentGap alignment_gap(const MirrorPotential& potential, std::span<const double> theta, std::size_t n);
AlignmentGap alignment_gap(const PotentialSet& potentials, const Params& theta);

struct TwoLayerOptions {
  double tau = 0.01;
  /// Potentials of (input layer, output layer) for neuron balances.
  std::optional<std::pair<MirrorPotential, MirrorPotential>> potentials;
  /// Initial (a, w) whose per-neuron balance is subtracted.
  std::optional<std::pair<Vector, Matrix>> initial;
};

struct TwoLayerReport {
  Vector a_tilde;
  Matrix w_tilde;
  double objective = 0.0;
  int active_count = 0;
  Vector neuron_balance;
};

/// a: output weights (one per neuron), w: input weights with one neuron per row.
TwoLayerReport two_layer_report(const Vector& a, const Matrix& w, double alpha, const TwoLayerOptions& options = {});
/// Convenience overload for a 2-layer Params (throws std::invalid_argument otherwise).
TwoLayerReport two_layer_report(const Params& theta, double alpha, const TwoLayerOptions& options = {});

struct ReparamResult {
  double deviation = 0.0;         // max_t |theta_A - u v|_inf
  double conservation_drift = 0.0;  // max_t |u^2 - v^2 - sqrt(lambda)|_inf
};

using LossGradient = std::function<Vector(const Vector&)>;

/// Euler on d theta = -sqrt(4 theta^2 + lambda) grad L against gradient descent
/// on (u, v) with theta = u v and u^2 - v^2 = sqrt(lambda).
ReparamResult reparam_compare(double lambda, const LossGradient& grad, const Vector& theta0, double eta,
                              std::size_t steps);
/// Linear model f = <theta, x> with the exponential loss on `data`.
ReparamResult reparam_compare(double lambda, const Dataset& data, double eta, std::size_t steps);

/// K_ij = <h(x_i), h(x_j)>.
Matrix ntk_gram(const HomogeneousNet& net, const Params& theta, const Dataset& data);

struct PrunePoint {
  double fraction = 0.0;
  double train_accuracy = 0.0;
};

/// Layerwise magnitude pruning: in every layer, zero the floor(fraction * size) smallest |w|.
Params prune_layerwise(const Params& theta, double fraction);
std::vector<PrunePoint> prune_eval(const HomogeneousNet& net, const Params& theta, const Dataset& data,
                                   const std::vector<double>& fractions);
double sign_accuracy(const HomogeneousNet& net, const Params& theta, const Dataset& data);

/// One logged row. The first block matches the metrics CSV columns in order.
struct MetricsRecord {
  long long step = 0;
  double time = 0.0;
  double eta_eff = 0.0;
  double log_loss = 0.0;
  double q_min = 0.0;
  double q_soft_margin = 0.0;
  double q_margin = 0.0;
  double margin_l1 = 0.0;
  double margin_l2 = 0.0;
  double margin_lp = 0.0;
  double horizon_margin = 0.0;
  double multi_q_margin = 0.0;
  double balance_drift_max = 0.0;
  double beta = 0.0;
  double e_tan = 0.0;
  double kkt_eps = 0.0;
  double kkt_delta = 0.0;
  double alignment_gap = 0.0;
  int active_neurons = -1;
  double objective_alpha_half = 0.0;

  // Not serialized.
  double alignment_bound = 0.0;
  double gap_bound = 0.0;
  double q_scale = 0.0;
  double total_dual = 0.0;
};

const std::vector<std::string>& metrics_columns();

struct RecordContext {
  const PotentialSet& potentials;
  const HomogeneousNet& net;
  const Dataset& data;
  MarginOptions margins;
  double tau = 0.01;
  std::vector<double> initial_balance;
};

MetricsRecord make_record(const RecordContext& ctx, const Params& theta, const LossGrad& eval,
                          const std::optional<Params>& velocity);

struct RateReport {
  double loss_slope = 0.0;
  std::vector<double> sample_time;
  std::vector<double> q_over_logt;
  bool g_bound_ok = false;
  double t0 = 0.0;
  /// Smallest ratio G(1/L(t)) / ((L^2/alpha) soft_margin(t0)^{alpha/L} (t - t0)) over the check.
  double g_ratio_min = 0.0;
};

/// Requires >= 100 post-separation records spanning >= 2 decades of time.
RateReport rate_report(const std::vector<MetricsRecord>& trajectory, int L, double alpha, double slack = 0.1);

/// Least-squares slope of y against x.
double ls_slope(const std::vector<double>& x, const std::vector<double>& y);

/// G(u1) - G(u0) with G' (u) = (ln u)^{a - 2}, evaluated in z = ln u.
double g_integral(double z0, double z1, double a);

}  // namespace mirrorflow
