#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mirrorflow/config.hpp"
#include "mirrorflow/errors.hpp"
#include "mirrorflow/flow.hpp"
#include "mirrorflow/serialize.hpp"

using namespace mirrorflow;
namespace fs = std::filesystem;

namespace {

Dataset one_point(double x, double y) {
  Dataset d;
  d.inputs = Matrix::Constant(1, 1, x);
  d.labels = Vector::Constant(1, y);
  return d;
}

RunConfig small_config(PotentialKind kind, double lambda, double p) {
  RunConfig c = default_run_config();
  c.potential.base = {kind, lambda, p};
  c.net.widths = {2, 10, 1};
  c.data.source = DataSource::Circle;
  c.data.K = 30;
  c.data.seed = 3;
  c.data.teacher_seed = 3;
  c.train.lr = 0.01;
  c.train.max_steps = 200;
  c.train.log_every = 10;
  c.train.seed = 5;
  return c;
}

// Reference gradient descent on a 2-layer ReLU net with an explicit
// per-example gradient of sum_i exp(-y_i a . relu(W x_i)).
void reference_gd(Matrix& W, Vector& a, const Dataset& d, double eta, int steps) {
  for (int s = 0; s < steps; ++s) {
    Matrix gW = Matrix::Zero(W.rows(), W.cols());
    Vector ga = Vector::Zero(a.size());
    for (Eigen::Index i = 0; i < d.inputs.cols(); ++i) {
      const Vector x = d.inputs.col(i);
      const Vector pre = W * x;
      const Vector h = pre.cwiseMax(0.0);
      const double y = d.labels(i);
      const double e = std::exp(-y * a.dot(h));
      ga += -y * e * h;
      for (Eigen::Index j = 0; j < W.rows(); ++j) {
        if (pre(j) > 0.0) gW.row(j) += -y * e * a(j) * x.transpose();
      }
    }
    W -= eta * gW;
    a -= eta * ga;
  }
}

std::string read_all(const fs::path& p) {
  std::ifstream is(p);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("schedule examples") {
  Schedule s;
  s.base_lr = 0.1;
  s.rescale_enabled = false;
  CHECK(schedule_lr(s, std::log(0.01), true) == 0.1);
  s.rescale_enabled = true;
  s.rescale_threshold = 0.1;
  s.rescale_factor = 0.1;
  CHECK(schedule_lr(s, std::log(0.01), true) == doctest::Approx(1.0));
  CHECK(schedule_lr(s, std::log(0.5), true) == 0.1);
  CHECK(schedule_lr(s, std::log(0.01), false) == 0.1);
}

TEST_CASE("one hyperbolic step by hand") {
  HomogeneousNet lin({1, 1}, Activation::Linear);
  const auto pots = uniform_potentials(MirrorPotential::hyperbolic(1.0), 1);
  const Dataset d = one_point(1.0, 1.0);
  Params th;
  th.layers = {Matrix::Zero(1, 1)};
  const TrainState s0 = init_state(pots, lin, d, th);
  Schedule sch;
  sch.base_lr = 0.1;
  const auto r = md_step(s0, pots, lin, d, sch);
  CHECK(r.next.dual.layers[0](0, 0) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(r.next.theta.layers[0](0, 0) == doctest::Approx(std::sinh(0.1)).epsilon(1e-14));
  CHECK(r.next.time == doctest::Approx(0.1));
  CHECK(r.next.step == 1);
  CHECK(r.velocity.layers[0](0, 0) == doctest::Approx(std::sinh(0.1) / 0.1));
}

TEST_CASE("euclidean step is a gradient descent step") {
  HomogeneousNet net({2, 4, 1}, Activation::Relu);
  const auto pots = uniform_potentials(MirrorPotential::euclidean(), 2);
  const Dataset d = gen_circle_dataset(gen_teacher(1, 3, 2), 1, 20);
  const Params th = net.init_params(InitScheme::He, 1.0, 2);
  const TrainState s0 = init_state(pots, net, d, th);
  Schedule sch;
  sch.base_lr = 0.05;
  const auto r = md_step(s0, pots, net, d, sch);
  const auto lg = net.loss_and_grad(th, d);
  Params expect = th;
  for (std::size_t l = 0; l < 2; ++l) expect.layers[l] += 0.05 * std::exp(lg.log_loss) * lg.grad_hat.layers[l];
  CHECK(max_abs_diff(r.next.theta, expect) <= 1e-14);
}

TEST_CASE("vanishing update when the loss is negligible") {
  HomogeneousNet lin({1, 1}, Activation::Linear);
  const auto pots = uniform_potentials(MirrorPotential::euclidean(), 1);
  const Dataset d = one_point(1.0, 1.0);
  Params th;
  th.layers = {Matrix::Constant(1, 1, 800.0)};
  const TrainState s0 = init_state(pots, lin, d, th);
  Schedule sch;
  sch.base_lr = 0.1;
  const auto r = md_step(s0, pots, lin, d, sch);
  CHECK(r.next.theta.layers[0](0, 0) == 800.0);
}

TEST_CASE("euclidean mirror descent matches reference gradient descent for 1000 steps") {
  RunConfig c = small_config(PotentialKind::Euclidean, 0.0, 2.0);
  c.train.max_steps = 1000;
  c.train.log_every = 1000;
  c.train.stop_log_loss = -1e300;
  const auto res = run(c);
  const HomogeneousNet net(c.net.widths, c.net.activation);
  const Params th0 = net.init_params(c.train.init_scheme, c.train.init_scale, c.train.seed);
  Matrix W = th0.layers[0];
  Vector a = th0.layers[1].transpose();
  reference_gd(W, a, res.data, c.train.lr, 1000);
  CHECK(res.final_state.step == 1000);
  CHECK((res.final_state.theta.layers[0] - W).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((res.final_state.theta.layers[1].transpose() - a).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("run with max_steps = 0 logs the initial record only") {
  RunConfig c = small_config(PotentialKind::Euclidean, 0.0, 2.0);
  c.train.max_steps = 0;
  const auto res = run(c);
  REQUIRE(res.records.size() == 1);
  CHECK(res.records[0].step == 0);
  CHECK(res.records[0].time == 0.0);
  CHECK(res.status == RunStatus::MaxSteps);
}

TEST_CASE("separable linear problem: loss strictly decreases") {
  RunConfig c = default_run_config();
  c.potential.base = {PotentialKind::Euclidean, 0.0, 2.0};
  c.net.widths = {1, 1};
  c.net.activation = Activation::Linear;
  c.train.lr = 0.01;
  c.train.max_steps = 500;
  c.train.log_every = 1;
  Dataset d;
  d.inputs = (Matrix(1, 3) << 1.0, -2.0, 0.5).finished();
  d.labels = (Vector(3) << 1.0, -1.0, 1.0).finished();
  const auto res = run(c, d);
  for (std::size_t i = 1; i < res.records.size(); ++i) CHECK(res.records[i].log_loss < res.records[i - 1].log_loss);
  CHECK(res.monotone_fraction == 1.0);
}

TEST_CASE("property: dual-primal consistency after every step") {
  for (auto kind : {PotentialKind::HyperbolicEntropy, PotentialKind::SmoothedHomogeneous, PotentialKind::Euclidean}) {
    RunConfig c = small_config(kind, 0.5, 3.0);
    const HomogeneousNet net(c.net.widths, c.net.activation);
    const auto pots = resolve_potentials(c);
    const Dataset d = make_dataset(c.data);
    TrainState s = init_state(pots, net, d, net.init_params(InitScheme::MeanField, 1.0, 1));
    const Schedule sch = make_schedule(c.train);
    double prev_time = 0.0;
    for (int k = 0; k < 200; ++k) {
      s = md_step(s, pots, net, d, sch).next;
      const Params z = dual_params(pots, s.theta);
      const double zmax = s.dual.flatten().cwiseAbs().maxCoeff();
      CHECK(max_abs_diff(z, s.dual) <= 1e-9 * (1.0 + zmax));
      CHECK(s.time > prev_time);
      prev_time = s.time;
    }
  }
}

TEST_CASE("rescaling activates after separation and follows the schedule") {
  RunConfig c = small_config(PotentialKind::HyperbolicEntropy, 0.1, 0.0);
  c.train.lr = 0.01;
  c.train.max_steps = 4000;
  c.train.log_every = 1;
  c.train.rescale = true;
  c.train.rescale_threshold = 0.1 * 30;
  c.train.rescale_factor = 0.1;
  const auto res = run(c);
  const Schedule sch = make_schedule(c.train);
  bool saw_rescale = false;
  for (std::size_t i = 0; i + 1 < res.records.size(); ++i) {
    const auto& r = res.records[i];
    const double expect = schedule_lr(sch, r.log_loss, r.q_min > 0.0);
    CHECK(r.eta_eff == doctest::Approx(expect).epsilon(1e-12));
    CHECK(res.records[i + 1].time == doctest::Approx(r.time + r.eta_eff).epsilon(1e-12));
    if (rescale_active(sch, r.log_loss, r.q_min > 0.0)) {
      saw_rescale = true;
      CHECK(r.eta_eff == doctest::Approx(0.1 * 0.01 * std::exp(-r.log_loss)).epsilon(1e-12));
    }
  }
  CHECK(saw_rescale);
}

TEST_CASE("max_time stops the run") {
  RunConfig c = small_config(PotentialKind::Euclidean, 0.0, 2.0);
  c.train.max_steps = 100000;
  c.train.max_time = 0.5;
  const auto res = run(c);
  CHECK(res.status == RunStatus::TimeReached);
  CHECK(res.final_state.time >= 0.5);
  CHECK(res.final_state.time < 0.5 + c.train.lr + 1e-12);
}

TEST_CASE("divergence is reported") {
  RunConfig c = small_config(PotentialKind::HyperbolicEntropy, 0.1, 0.0);
  c.train.lr = 1e4;
  c.train.max_steps = 50;
  const auto res = run(c);
  CHECK(res.status == RunStatus::Diverged);
  CHECK_FALSE(res.message.empty());
  CHECK(res.final_state.theta.all_finite());
}

TEST_CASE("determinism: identical configs give bit-identical metrics") {
  const fs::path dir = fs::temp_directory_path() / "mirrorflow_test_flow_det";
  fs::remove_all(dir);
  fs::create_directories(dir);
  RunConfig c = small_config(PotentialKind::SmoothedHomogeneous, 1.0, 3.0);
  write_metrics_csv(run(c).records, dir / "a.csv");
  write_metrics_csv(run(c).records, dir / "b.csv");
  CHECK(read_all(dir / "a.csv") == read_all(dir / "b.csv"));
  c.train.seed = 6;
  write_metrics_csv(run(c).records, dir / "c.csv");
  CHECK(read_all(dir / "a.csv") != read_all(dir / "c.csv"));
}

TEST_CASE("property: dual growth lower bound after separation") {
  for (auto kind : {PotentialKind::Euclidean, PotentialKind::HyperbolicEntropy}) {
    RunConfig c = small_config(kind, 0.1, 2.0);
    c.train.lr = 0.02;
    c.train.max_steps = 6000;
    c.train.log_every = 20;
    const auto res = run(c);
    int checked = 0;
    for (std::size_t i = 1; i < res.records.size(); ++i) {
      const auto& a = res.records[i - 1];
      const auto& b = res.records[i];
      if (a.q_min <= 0.0 || b.log_loss >= -1.0) continue;
      const double loss = std::exp(b.log_loss);
      const double rate = (b.total_dual - a.total_dual) / (b.time - a.time);
      CHECK(rate >= 2.0 * loss * (-b.log_loss) * (1.0 - 0.1));
      ++checked;
    }
    CHECK(checked > 10);
  }
}

TEST_CASE("small steps keep the loss non-increasing") {
  RunConfig c = small_config(PotentialKind::SmoothedHomogeneous, 1.0, 3.0);
  c.train.lr = 0.005;
  c.train.max_steps = 2000;
  CHECK(run(c).monotone_fraction >= 0.99);
}
