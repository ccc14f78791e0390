#pragma once

// Bias-free multilayer ReLU/linear networks f(theta, x), homogeneous of degree
// L in theta, with Clarke-subgradient backprop and the exponential loss kept
// in log form.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "mirrorflow/data.hpp"

namespace mirrorflow {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Weight matrices in forward order: layers[0] acts on the (augmented) input,
/// layers.back() is the 1 x h_{L-1} output row.
struct Params {
  std::vector<Matrix> layers;

  std::size_t depth() const noexcept { return layers.size(); }
  std::size_t size() const noexcept;
  Params scaled(double c) const;
  Params zeros_like() const;
  /// Concatenation of the layers, each flattened column-major.
  Vector flatten() const;
  /// Inverse of flatten(); `like` supplies the shapes.
  static Params unflatten(const Vector& flat, const Params& like);
  bool all_finite() const;

  Params& operator+=(const Params& other);
  Params& operator*=(double c);
};

double dot(const Params& a, const Params& b);
double max_abs_diff(const Params& a, const Params& b);

enum class Activation { Relu, Linear };

std::string_view to_string(Activation act);
Activation parse_activation(std::string_view name);

struct MarginVector {
  Vector q;
  double q_min = 0.0;
  std::size_t argmin = 0;
};

struct LossGrad {
  double log_loss = 0.0;
  /// sum_i p_i y_i df(x_i)/dtheta; the loss gradient is -exp(log_loss) * grad_hat.
  Params grad_hat;
  Vector softmax;
  MarginVector margins;
};

struct EulerResidual {
  double residual = 0.0;
  bool at_kink = false;
};

enum class InitScheme { MeanField, He };

std::string_view to_string(InitScheme scheme);
InitScheme parse_init_scheme(std::string_view name);

class HomogeneousNet {
 public:
  /// widths = [d_in, h_1, ..., h_{L-1}, 1]. With input_bias, d_in counts the
  /// constant coordinate appended to every input.
  HomogeneousNet(std::vector<int> widths, Activation activation, bool input_bias = false);

  const std::vector<int>& widths() const noexcept { return widths_; }
  Activation activation() const noexcept { return activation_; }
  bool input_bias() const noexcept { return input_bias_; }
  /// Number of weight matrices, the homogeneity degree.
  int depth() const noexcept { return static_cast<int>(widths_.size()) - 1; }
  /// Dimension of raw data points (excluding the bias coordinate).
  int data_dim() const noexcept { return widths_.front() - (input_bias_ ? 1 : 0); }

  /// Throws std::invalid_argument when the layer shapes disagree with widths.
  void check(const Params& theta) const;

  Matrix augment(const Matrix& inputs) const;

  double forward(const Params& theta, const Eigen::Ref<const Vector>& x) const;
  /// Outputs for every column of `inputs`.
  Vector forward_batch(const Params& theta, const Matrix& inputs) const;

  MarginVector margins(const Params& theta, const Dataset& data) const;
  LossGrad loss_and_grad(const Params& theta, const Dataset& data) const;

  /// Selected Clarke subgradient of f(., x) at theta (relu'(0) = 0).
  Params subgradient(const Params& theta, const Eigen::Ref<const Vector>& x) const;
  /// Subgradients of every example, one flattened column per example.
  Matrix jacobian(const Params& theta, const Matrix& inputs) const;

  /// |<theta, h> - L f(theta, x)|; at_kink flags a hidden pre-activation of exactly 0.
  EulerResidual euler_residual(const Params& theta, const Eigen::Ref<const Vector>& x) const;

  Params init_params(InitScheme scheme, double scale, std::uint64_t seed) const;

 private:
  struct Tape {
    std::vector<Matrix> pre;   // pre-activations of hidden layers
    std::vector<Matrix> post;  // post[0] = inputs, post[l] = sigma(pre[l-1])
    Eigen::RowVectorXd out;
  };

  Tape run_forward(const Params& theta, const Matrix& augmented) const;
  /// Backprop of a row of output cotangents; returns sum_i c_i df(x_i).
  Params backward(const Params& theta, const Tape& tape, const Eigen::RowVectorXd& cotangent) const;

  std::vector<int> widths_;
  Activation activation_;
  bool input_bias_;
};

/// log(sum exp(v)) computed stably.
double log_sum_exp(const Eigen::Ref<const Vector>& v);

}  // namespace mirrorflow
