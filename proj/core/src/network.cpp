#include "mirrorflow/network.hpp"

#include <cmath>
#include <stdexcept>

#include "mirrorflow/rng.hpp"

namespace mirrorflow {

std::size_t Params::size() const noexcept {
  std::size_t n = 0;
  for (const auto& w : layers) n += static_cast<std::size_t>(w.size());
  return n;
}

Params Params::scaled(double c) const {
  Params out = *this;
  out *= c;
  return out;
}

Params Params::zeros_like() const {
  Params out;
  out.layers.reserve(layers.size());
  for (const auto& w : layers) out.layers.push_back(Matrix::Zero(w.rows(), w.cols()));
  return out;
}

Vector Params::flatten() const {
  Vector flat(static_cast<Eigen::Index>(size()));
  Eigen::Index offset = 0;
  for (const auto& w : layers) {
    flat.segment(offset, w.size()) = w.reshaped();
    offset += w.size();
  }
  return flat;
}

Params Params::unflatten(const Vector& flat, const Params& like) {
  if (static_cast<std::size_t>(flat.size()) != like.size()) {
    throw std::invalid_argument("unflatten: vector length does not match parameter count");
  }
  Params out = like.zeros_like();
  Eigen::Index offset = 0;
  for (auto& w : out.layers) {
    w.reshaped() = flat.segment(offset, w.size());
    offset += w.size();
  }
  return out;
}

bool Params::all_finite() const {
  for (const auto& w : layers) {
    if (!w.allFinite()) return false;
  }
  return true;
}

Params& Params::operator+=(const Params& other) {
  if (other.layers.size() != layers.size()) throw std::invalid_argument("Params: depth mismatch");
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i] += other.layers[i];
  return *this;
}

Params& Params::operator*=(double c) {
  for (auto& w : layers) w *= c;
  return *this;
}

double dot(const Params& a, const Params& b) {
  if (a.layers.size() != b.layers.size()) throw std::invalid_argument("dot: depth mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.layers.size(); ++i) s += a.layers[i].cwiseProduct(b.layers[i]).sum();
  return s;
}

double max_abs_diff(const Params& a, const Params& b) {
  if (a.layers.size() != b.layers.size()) throw std::invalid_argument("max_abs_diff: depth mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    m = std::max(m, (a.layers[i] - b.layers[i]).cwiseAbs().maxCoeff());
  }
  return m;
}

std::string_view to_string(Activation act) { return act == Activation::Relu ? "relu" : "linear"; }

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::Relu;
  if (name == "linear") return Activation::Linear;
  throw std::invalid_argument("unknown activation '" + std::string(name) + "' (expected relu or linear)");
}

std::string_view to_string(InitScheme scheme) { return scheme == InitScheme::MeanField ? "meanfield" : "he"; }

InitScheme parse_init_scheme(std::string_view name) {
  if (name == "meanfield") return InitScheme::MeanField;
  if (name == "he") return InitScheme::He;
  throw std::invalid_argument("unknown init scheme '" + std::string(name) + "' (expected meanfield or he)");
}

double log_sum_exp(const Eigen::Ref<const Vector>& v) {
  if (v.size() == 0) throw std::invalid_argument("log_sum_exp: empty input");
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

HomogeneousNet::HomogeneousNet(std::vector<int> widths, Activation activation, bool input_bias)
    : widths_(std::move(widths)), activation_(activation), input_bias_(input_bias) {
  if (widths_.size() < 2) throw std::invalid_argument("net.widths needs at least an input and an output width");
  for (int w : widths_) {
    if (w < 1) throw std::invalid_argument("net.widths entries must be positive");
  }
  if (widths_.back() != 1) throw std::invalid_argument("net.widths must end in 1 (scalar output)");
  if (input_bias_ && widths_.front() < 2) {
    throw std::invalid_argument("net.widths[0] must count the bias coordinate when input_bias is set");
  }
}

void HomogeneousNet::check(const Params& theta) const {
  if (theta.layers.size() != static_cast<std::size_t>(depth())) {
    throw std::invalid_argument("params have " + std::to_string(theta.layers.size()) + " layers, net has " +
                                std::to_string(depth()));
  }
  for (int l = 0; l < depth(); ++l) {
    const auto& w = theta.layers[static_cast<std::size_t>(l)];
    if (w.rows() != widths_[l + 1] || w.cols() != widths_[l]) {
      throw std::invalid_argument("layer " + std::to_string(l) + " has shape " + std::to_string(w.rows()) + "x" +
                                  std::to_string(w.cols()) + ", expected " + std::to_string(widths_[l + 1]) + "x" +
                                  std::to_string(widths_[l]));
    }
  }
}

Matrix HomogeneousNet::augment(const Matrix& inputs) const {
  if (inputs.rows() != data_dim()) {
    throw std::invalid_argument("input dimension " + std::to_string(inputs.rows()) + " does not match net input " +
                                std::to_string(data_dim()));
  }
  if (!input_bias_) return inputs;
  Matrix out(inputs.rows() + 1, inputs.cols());
  out.topRows(inputs.rows()) = inputs;
  out.bottomRows(1).setOnes();
  return out;
}

HomogeneousNet::Tape HomogeneousNet::run_forward(const Params& theta, const Matrix& augmented) const {
  check(theta);
  Tape tape;
  const int L = depth();
  tape.post.reserve(static_cast<std::size_t>(L));
  tape.pre.reserve(static_cast<std::size_t>(L - 1));
  tape.post.push_back(augmented);
  for (int l = 0; l + 1 < L; ++l) {
    tape.pre.push_back(theta.layers[static_cast<std::size_t>(l)] * tape.post.back());
    if (activation_ == Activation::Relu) {
      tape.post.push_back(tape.pre.back().cwiseMax(0.0));
    } else {
      tape.post.push_back(tape.pre.back());
    }
  }
  tape.out = theta.layers.back() * tape.post.back();
  return tape;
}

Params HomogeneousNet::backward(const Params& theta, const Tape& tape, const Eigen::RowVectorXd& cotangent) const {
  const int L = depth();
  Params grad;
  grad.layers.resize(static_cast<std::size_t>(L));
  Matrix delta = cotangent;
  for (int l = L - 1; l >= 0; --l) {
    const auto idx = static_cast<std::size_t>(l);
    grad.layers[idx].noalias() = delta * tape.post[idx].transpose();
    if (l == 0) break;
    Matrix back = theta.layers[idx].transpose() * delta;
    if (activation_ == Activation::Relu) {
      back.array() *= (tape.pre[idx - 1].array() > 0.0).cast<double>();
    }
    delta = std::move(back);
  }
  return grad;
}

double HomogeneousNet::forward(const Params& theta, const Eigen::Ref<const Vector>& x) const {
  const Matrix in = augment(Matrix(x));
  return run_forward(theta, in).out(0);
}

Vector HomogeneousNet::forward_batch(const Params& theta, const Matrix& inputs) const {
  return run_forward(theta, augment(inputs)).out.transpose();
}

MarginVector HomogeneousNet::margins(const Params& theta, const Dataset& data) const {
  if (data.size() == 0) throw std::invalid_argument("margins: empty dataset");
  MarginVector m;
  m.q = data.labels.cwiseProduct(forward_batch(theta, data.inputs));
  Eigen::Index arg = 0;
  for (Eigen::Index i = 1; i < m.q.size(); ++i) {
    if (m.q(i) < m.q(arg)) arg = i;
  }
  m.argmin = static_cast<std::size_t>(arg);
  m.q_min = m.q(arg);
  return m;
}

LossGrad HomogeneousNet::loss_and_grad(const Params& theta, const Dataset& data) const {
  if (data.size() == 0) throw std::invalid_argument("loss_and_grad: empty dataset");
  const Tape tape = run_forward(theta, augment(data.inputs));
  LossGrad out;
  auto& m = out.margins;
  m.q = data.labels.cwiseProduct(tape.out.transpose());
  Eigen::Index arg = 0;
  for (Eigen::Index i = 1; i < m.q.size(); ++i) {
    if (m.q(i) < m.q(arg)) arg = i;
  }
  m.argmin = static_cast<std::size_t>(arg);
  m.q_min = m.q(arg);
  // The minimum margin gives the largest exponent, so the shifted sum is >= 1.
  // Terms below e^-500 are dropped: they are far under one ulp of the sum and
  // would otherwise feed subnormals into the backward pass.
  const Eigen::ArrayXd gap = m.q_min - m.q.array();
  const Eigen::ArrayXd shifted = (gap > -500.0).select(gap.exp(), 0.0);
  const double total = shifted.sum();
  out.log_loss = -m.q_min + std::log(total);
  out.softmax = shifted / total;
  const Eigen::RowVectorXd cot = out.softmax.cwiseProduct(data.labels).transpose();
  out.grad_hat = backward(theta, tape, cot);
  return out;
}

Params HomogeneousNet::subgradient(const Params& theta, const Eigen::Ref<const Vector>& x) const {
  const Tape tape = run_forward(theta, augment(Matrix(x)));
  return backward(theta, tape, Eigen::RowVectorXd::Ones(1));
}

Matrix HomogeneousNet::jacobian(const Params& theta, const Matrix& inputs) const {
  const Matrix aug = augment(inputs);
  const Tape tape = run_forward(theta, aug);
  Matrix jac(static_cast<Eigen::Index>(theta.size()), inputs.cols());
  Eigen::RowVectorXd cot = Eigen::RowVectorXd::Zero(inputs.cols());
  for (Eigen::Index i = 0; i < inputs.cols(); ++i) {
    cot.setZero();
    cot(i) = 1.0;
    jac.col(i) = backward(theta, tape, cot).flatten();
  }
  return jac;
}

EulerResidual HomogeneousNet::euler_residual(const Params& theta, const Eigen::Ref<const Vector>& x) const {
  const Tape tape = run_forward(theta, augment(Matrix(x)));
  const Params h = backward(theta, tape, Eigen::RowVectorXd::Ones(1));
  EulerResidual r;
  r.residual = std::abs(dot(theta, h) - depth() * tape.out(0));
  if (activation_ == Activation::Relu) {
    for (const auto& z : tape.pre) {
      if ((z.array() == 0.0).any()) r.at_kink = true;
    }
  }
  return r;
}

Params HomogeneousNet::init_params(InitScheme scheme, double scale, std::uint64_t seed) const {
  if (!(scale > 0.0) || !std::isfinite(scale)) throw std::invalid_argument("init scale must be positive");
  SplitMix64 rng(seed);
  Params theta;
  const int L = depth();
  for (int l = 0; l < L; ++l) {
    const int fan_in = widths_[l];
    const int fan_out = widths_[l + 1];
    double std_dev;
    if (scheme == InitScheme::He) {
      std_dev = std::sqrt(2.0 / fan_in);
    } else {
      std_dev = l == 0 ? scale : scale / fan_in;
    }
    Matrix w(fan_out, fan_in);
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = std_dev * rng.normal();
    }
    theta.layers.push_back(std::move(w));
  }
  return theta;
}

}  // namespace mirrorflow
