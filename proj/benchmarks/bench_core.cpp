#include <benchmark/benchmark.h>

#include <vector>

#include "mirrorflow/config.hpp"
#include "mirrorflow/flow.hpp"

using namespace mirrorflow;

namespace {

struct Setup {
  RunConfig config;
  HomogeneousNet net;
  Dataset data;
  PotentialSet pots;
  Params theta;

  explicit Setup(const PotentialSpec& pot, int width = 100)
      : config(default_run_config()), net({2, width, 1}, Activation::Relu) {
    config.potential.base = pot;
    config.net.widths = {2, width, 1};
    config.data.K = 200;
    data = make_dataset(config.data);
    pots = resolve_potentials(config);
    theta = net.init_params(InitScheme::MeanField, 1.0, 0);
  }
};

const PotentialSpec kPots[] = {{PotentialKind::Euclidean, 0.0, 2.0},
                               {PotentialKind::HyperbolicEntropy, 0.1, 2.0},
                               {PotentialKind::SmoothedHomogeneous, 1.0, 3.0}};

void BM_LossAndGrad(benchmark::State& state) {
  const Setup s(kPots[0], static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(s.net.loss_and_grad(s.theta, s.data));
  state.SetItemsProcessed(state.iterations() * static_cast<long long>(s.data.size()));
}
BENCHMARK(BM_LossAndGrad)->Arg(10)->Arg(100)->Arg(1000);

void BM_MdStep(benchmark::State& state) {
  Setup s(kPots[state.range(0)]);
  s.config.train.lr = 1e-5;
  const auto schedule = make_schedule(s.config.train);
  const TrainState st = init_state(s.pots, s.net, s.data, s.theta);
  for (auto _ : state) benchmark::DoNotOptimize(md_step(st, s.pots, s.net, s.data, schedule));
}
BENCHMARK(BM_MdStep)->DenseRange(0, 2)->ArgName("potential");

void BM_SmoothedGradInverse(benchmark::State& state) {
  const auto pot = MirrorPotential::smoothed(static_cast<double>(state.range(0)), 1.0);
  std::vector<double> z(1000), out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = -50.0 + 0.1 * static_cast<double>(i);
  for (auto _ : state) {
    grad_inverse(pot, z, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long long>(z.size()));
}
BENCHMARK(BM_SmoothedGradInverse)->Arg(3)->Arg(10);

}  // namespace

BENCHMARK_MAIN();
