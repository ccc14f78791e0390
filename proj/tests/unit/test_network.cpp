#include <doctest.h>

#include <cmath>
#include <random>

#include "mirrorflow/data.hpp"
#include "mirrorflow/network.hpp"
#include "oracles.hpp"

using namespace mirrorflow;

namespace {

Dataset make_data(const Matrix& x, const Vector& y) {
  Dataset d;
  d.inputs = x;
  d.labels = y;
  return d;
}

Dataset random_dataset(std::mt19937_64& gen, int dim, int K) {
  std::normal_distribution<double> n(0.0, 1.0);
  Dataset d;
  d.inputs.resize(dim, K);
  d.labels.resize(K);
  for (int k = 0; k < K; ++k) {
    for (int i = 0; i < dim; ++i) d.inputs(i, k) = n(gen);
    d.labels(k) = k % 2 == 0 ? 1.0 : -1.0;
  }
  return d;
}

// Plain loss sum_i exp(-y_i f(x_i)) without any log-domain tricks.
double plain_loss(const HomogeneousNet& net, const Params& th, const Dataset& d) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < d.inputs.cols(); ++i) s += std::exp(-d.labels(i) * net.forward(th, d.inputs.col(i)));
  return s;
}

bool near_kink(const HomogeneousNet& net, const Params& th, const Dataset& d, double tol) {
  Matrix h = th.layers[0] * net.augment(d.inputs);
  for (std::size_t l = 1; l < th.layers.size(); ++l) {
    if ((h.array().abs() < tol).any()) return true;
    h = th.layers[l] * h.cwiseMax(0.0);
  }
  return false;
}

}  // namespace

TEST_CASE("forward examples") {
  HomogeneousNet lin({2, 2, 1}, Activation::Linear);
  Params th;
  th.layers = {Matrix::Identity(2, 2), Matrix::Ones(1, 2)};
  CHECK(lin.forward(th, Eigen::Vector2d(2, 3)) == 5.0);

  HomogeneousNet relu({2, 2, 1}, Activation::Relu);
  Matrix w(2, 2);
  w << 1, 0, 0, -1;
  th.layers[0] = w;
  CHECK(relu.forward(th, Eigen::Vector2d(2, 3)) == 2.0);

  CHECK_THROWS(relu.forward(th, Vector::Ones(3)));
  Params bad;
  bad.layers = {Matrix::Ones(3, 2), Matrix::Ones(1, 3)};
  CHECK_THROWS_AS(relu.check(bad), std::invalid_argument);
  CHECK_THROWS(HomogeneousNet({2, 2}, Activation::Relu));
}

TEST_CASE("input bias is an augmented coordinate") {
  HomogeneousNet net({3, 4, 1}, Activation::Relu, true);
  CHECK(net.data_dim() == 2);
  const Params th = net.init_params(InitScheme::He, 1.0, 3);
  const Vector x = Eigen::Vector2d(0.3, -0.2);
  Vector xa(3);
  xa << 0.3, -0.2, 1.0;
  const double expect = (th.layers[1] * (th.layers[0] * xa).cwiseMax(0.0))(0);
  CHECK(net.forward(th, x) == doctest::Approx(expect).epsilon(1e-15));
}

TEST_CASE("property: homogeneity and Euler identity") {
  std::mt19937_64 gen(1);
  std::normal_distribution<double> n(0.0, 1.0);
  for (const auto& widths : {std::vector<int>{3, 5, 1}, std::vector<int>{2, 4, 3, 1}, std::vector<int>{4, 1}}) {
    for (Activation act : {Activation::Relu, Activation::Linear}) {
      HomogeneousNet net(widths, act);
      const int L = net.depth();
      for (int k = 0; k < 100; ++k) {
        const Params th = net.init_params(InitScheme::He, 1.0, static_cast<std::uint64_t>(k));
        Vector x(widths[0]);
        for (auto& v : x) v = n(gen);
        const double f = net.forward(th, x);
        for (double c : {0.5, 2.0, 10.0}) {
          const double fc = net.forward(th.scaled(c), x);
          CHECK(std::abs(fc - std::pow(c, L) * f) <= 1e-9 * std::pow(c, L) * (1.0 + std::abs(f)));
        }
        const auto er = net.euler_residual(th, x);
        if (!er.at_kink) CHECK(er.residual <= 1e-8 * (1.0 + std::abs(L * f)));
        CHECK(net.euler_residual(th.scaled(3.0), x).residual <= 1e-8 * std::pow(3.0, L) * (1.0 + std::abs(L * f)));
      }
    }
  }
}

TEST_CASE("euler residual flags kinks") {
  HomogeneousNet net({2, 2, 1}, Activation::Relu);
  Params th;
  th.layers = {Matrix::Identity(2, 2), Matrix::Ones(1, 2)};
  CHECK(net.euler_residual(th, Eigen::Vector2d(0.0, 1.0)).at_kink);
  CHECK_FALSE(net.euler_residual(th, Eigen::Vector2d(0.5, 1.0)).at_kink);
}

TEST_CASE("margins") {
  HomogeneousNet lin({2, 1}, Activation::Linear);
  Params th;
  th.layers = {(Matrix(1, 2) << 1, 0).finished()};
  auto m = lin.margins(th, make_data((Matrix(2, 1) << 1, 0).finished(), Vector::Ones(1)));
  CHECK(m.q(0) == 1.0);
  CHECK(m.q_min == 1.0);
  m = lin.margins(th, make_data((Matrix(2, 2) << 1, 1, 0, 0).finished(), Vector::Ones(2)));
  CHECK(m.argmin == 0);
  Dataset empty;
  empty.inputs.resize(2, 0);
  CHECK_THROWS(lin.margins(th, empty));
}

TEST_CASE("teacher parameters separate teacher-labeled circle data") {
  const auto t = gen_teacher(4, 3, 2);
  const auto d = gen_circle_dataset(t, 9, 200);
  HomogeneousNet net({2, 3, 1}, Activation::Relu);
  Params th;
  th.layers = {t.w, t.a.transpose()};
  CHECK(net.margins(th, d).q_min > 0.0);
}

TEST_CASE("loss_and_grad examples") {
  HomogeneousNet lin({1, 1}, Activation::Linear);
  Params th;
  th.layers = {Matrix::Zero(1, 1)};
  auto lg = lin.loss_and_grad(th, make_data(Matrix::Ones(1, 1), Vector::Ones(1)));
  CHECK(lg.log_loss == 0.0);
  CHECK(lg.softmax(0) == 1.0);
  lg = lin.loss_and_grad(th, make_data(Matrix::Ones(1, 2), Vector::Ones(2)));
  CHECK(lg.log_loss == doctest::Approx(std::log(2.0)));
  CHECK(lg.softmax(0) == doctest::Approx(0.5));

  HomogeneousNet lin2({2, 1}, Activation::Linear);
  th.layers = {(Matrix(1, 2) << 1, 0).finished()};
  const Dataset d = make_data((Matrix(2, 1) << 1, 0).finished(), Vector::Ones(1));
  lg = lin2.loss_and_grad(th, d);
  const Vector grad = -std::exp(lg.log_loss) * lg.grad_hat.flatten();
  CHECK(grad(0) == doctest::Approx(-std::exp(-1.0)).epsilon(1e-14));
  CHECK(grad(1) == 0.0);
  for (int i = 0; i < 2; ++i) {
    const auto f = [&](double v) {
      Params t = th;
      t.layers[0](0, i) = v;
      return plain_loss(lin2, t, d);
    };
    CHECK(oracle::central_diff(f, th.layers[0](0, i), 1e-6) == doctest::Approx(grad(i)).epsilon(1e-6));
  }
}

TEST_CASE("property: backprop matches finite differences of the loss") {
  std::mt19937_64 gen(2);
  int checked = 0;
  for (int k = 0; checked < 50 && k < 500; ++k) {
    const std::vector<int> widths = k % 2 ? std::vector<int>{3, 6, 1} : std::vector<int>{2, 4, 3, 1};
    HomogeneousNet net(widths, Activation::Relu);
    const Params th = net.init_params(InitScheme::He, 1.0, static_cast<std::uint64_t>(100 + k)).scaled(0.7);
    const Dataset d = random_dataset(gen, widths[0], 7);
    if (near_kink(net, th, d, 1e-4)) continue;
    ++checked;
    const auto lg = net.loss_and_grad(th, d);
    const Vector grad = -std::exp(lg.log_loss) * lg.grad_hat.flatten();
    const Vector flat = th.flatten();
    for (Eigen::Index i = 0; i < flat.size(); ++i) {
      const double h = 1e-6 * std::max(1.0, std::abs(flat(i)));
      Vector a = flat, b = flat;
      a(i) += h;
      b(i) -= h;
      const double fd =
          (plain_loss(net, Params::unflatten(a, th), d) - plain_loss(net, Params::unflatten(b, th), d)) / (2 * h);
      CHECK(std::abs(fd - grad(i)) <= 1e-5 * std::max(grad.cwiseAbs().maxCoeff(), 1e-8));
    }
  }
  CHECK(checked == 50);
}

TEST_CASE("property: log loss matches extended precision") {
  std::mt19937_64 gen(8);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  HomogeneousNet lin({1, 1}, Activation::Linear);
  Params th;
  th.layers = {Matrix::Ones(1, 1)};
  for (int k = 0; k < 100; ++k) {
    const int K = 1 + k % 13;
    Dataset d = make_data(Matrix(1, K), Vector::Ones(K));
    std::vector<double> neg(K);
    for (int i = 0; i < K; ++i) {
      d.inputs(0, i) = u(gen);
      neg[i] = -d.inputs(0, i);
    }
    const auto lg = lin.loss_and_grad(th, d);
    CHECK(std::abs(lg.log_loss - oracle::lse_long(neg)) <= 1e-12 * (1.0 + std::abs(lg.log_loss)));
    CHECK(lg.softmax.sum() == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(log_sum_exp(Eigen::Map<Vector>(neg.data(), K)) == doctest::Approx(oracle::lse_long(neg)).epsilon(1e-13));
  }
}

TEST_CASE("log loss far below the double range stays finite") {
  HomogeneousNet lin({1, 1}, Activation::Linear);
  Params th;
  th.layers = {Matrix::Constant(1, 1, 1e6)};
  const auto lg = lin.loss_and_grad(th, make_data((Matrix(1, 2) << 1.0, 2.0).finished(), Vector::Ones(2)));
  CHECK(lg.log_loss == doctest::Approx(-1e6));
  CHECK(lg.softmax(0) == 1.0);
  CHECK(lg.softmax(1) == 0.0);
  CHECK(lg.grad_hat.all_finite());
}

TEST_CASE("property: layer symmetry identity of the loss gradient") {
  std::mt19937_64 gen(4);
  int checked = 0;
  for (int k = 0; checked < 30 && k < 300; ++k) {
    HomogeneousNet net({3, 5, 4, 1}, Activation::Relu);
    const Params th = net.init_params(InitScheme::He, 1.0, static_cast<std::uint64_t>(k));
    const Dataset d = random_dataset(gen, 3, 9);
    if (near_kink(net, th, d, 1e-6)) continue;
    ++checked;
    const auto lg = net.loss_and_grad(th, d);
    std::vector<double> s;
    for (std::size_t l = 0; l < th.layers.size(); ++l) s.push_back(th.layers[l].cwiseProduct(lg.grad_hat.layers[l]).sum());
    for (std::size_t l = 1; l < s.size(); ++l) CHECK(std::abs(s[l] - s[0]) <= 1e-8 * (1.0 + std::abs(s[0])));
  }
  CHECK(checked == 30);
}

TEST_CASE("relu derivative at zero is zero") {
  HomogeneousNet net({1, 1, 1}, Activation::Relu);
  Params th;
  th.layers = {Matrix::Ones(1, 1), Matrix::Ones(1, 1)};
  const Params g = net.subgradient(th, Vector::Zero(1));
  CHECK(g.layers[0](0, 0) == 0.0);
  CHECK(g.layers[1](0, 0) == 0.0);
}

TEST_CASE("jacobian columns are per-example subgradients") {
  HomogeneousNet net({2, 3, 1}, Activation::Relu);
  const Params th = net.init_params(InitScheme::He, 1.0, 5);
  Matrix x(2, 3);
  x << 0.1, -0.4, 0.9, 0.3, 0.2, -0.7;
  const Matrix J = net.jacobian(th, x);
  for (int i = 0; i < 3; ++i) CHECK((J.col(i) - net.subgradient(th, x.col(i)).flatten()).norm() == 0.0);
}

TEST_CASE("params helpers") {
  HomogeneousNet net({2, 3, 1}, Activation::Relu);
  const Params th = net.init_params(InitScheme::MeanField, 1.0, 1);
  CHECK(th.size() == 9);
  const Params back = Params::unflatten(th.flatten(), th);
  CHECK(max_abs_diff(back, th) == 0.0);
  CHECK(dot(th, th) == doctest::Approx(th.flatten().squaredNorm()));
  CHECK(th.layers[0].cols() == 2);
  CHECK(th.layers[1].rows() == 1);
  // Same seed, same parameters.
  CHECK(max_abs_diff(th, net.init_params(InitScheme::MeanField, 1.0, 1)) == 0.0);
  CHECK(max_abs_diff(th, net.init_params(InitScheme::MeanField, 1.0, 2)) > 0.0);
  CHECK(parse_init_scheme("he") == InitScheme::He);
  CHECK_THROWS(parse_init_scheme("xavier"));
  CHECK_THROWS(parse_activation("tanh"));
}
