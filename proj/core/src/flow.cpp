#include "mirrorflow/flow.hpp"

#include <cmath>
#include <limits>

#include "mirrorflow/errors.hpp"

namespace mirrorflow {

Schedule make_schedule(const TrainConfig& train) {
  Schedule s;
  s.base_lr = train.lr;
  s.rescale_enabled = train.rescale;
  s.rescale_threshold = train.rescale_threshold;
  s.rescale_factor = train.rescale_factor;
  s.max_steps = train.max_steps;
  s.stop_log_loss = train.stop_log_loss;
  s.max_time = train.max_time;
  return s;
}

bool rescale_active(const Schedule& schedule, double log_loss, bool all_classified) {
  return schedule.rescale_enabled && all_classified && log_loss < std::log(schedule.rescale_threshold);
}

double schedule_lr(const Schedule& schedule, double log_loss, bool all_classified) {
  if (rescale_active(schedule, log_loss, all_classified)) {
    return schedule.rescale_factor * schedule.base_lr * std::exp(-log_loss);
  }
  return schedule.base_lr;
}

std::string_view to_string(RunStatus status) {
  switch (status) {
    case RunStatus::MaxSteps: return "max_steps";
    case RunStatus::LossReached: return "loss_reached";
    case RunStatus::TimeReached: return "time_reached";
    case RunStatus::Diverged: return "diverged";
  }
  return "unknown";
}

TrainState init_state(const PotentialSet& potentials, const HomogeneousNet& net, const Dataset& data,
                      Params theta0, std::uint64_t seed) {
  net.check(theta0);
  TrainState s;
  s.dual = dual_params(potentials, theta0);
  s.theta = std::move(theta0);
  s.log_loss = net.loss_and_grad(s.theta, data).log_loss;
  s.rng_seed = seed;
  return s;
}

StepResult md_step(const TrainState& state, const LossGrad& eval, const PotentialSet& potentials,
                   const Schedule& schedule) {
  const bool classified = eval.margins.q_min > 0.0;
  StepResult r;
  r.eta_eff = schedule_lr(schedule, eval.log_loss, classified);
  // Dual increment eta_eff * exp(log_loss) * grad_hat; in the rescaled branch the
  // exponentials cancel and are never formed.
  const double coeff = rescale_active(schedule, eval.log_loss, classified)
                           ? schedule.rescale_factor * schedule.base_lr
                           : schedule.base_lr * std::exp(eval.log_loss);
  r.next.dual = state.dual;
  for (std::size_t l = 0; l < r.next.dual.layers.size(); ++l) {
    r.next.dual.layers[l] += coeff * eval.grad_hat.layers[l];
  }
  if (!r.next.dual.all_finite() || !std::isfinite(r.eta_eff)) {
    throw DivergenceError("non-finite dual update at step " + std::to_string(state.step));
  }
  try {
    r.next.theta = primal_from_dual(potentials, r.next.dual);
  } catch (const std::domain_error& e) {
    throw DivergenceError(std::string("non-finite primal update: ") + e.what());
  }
  if (!r.next.theta.all_finite()) {
    throw DivergenceError("non-finite primal update at step " + std::to_string(state.step));
  }
  r.velocity = r.next.theta;
  for (std::size_t l = 0; l < r.velocity.layers.size(); ++l) {
    r.velocity.layers[l] = (r.velocity.layers[l] - state.theta.layers[l]) / r.eta_eff;
  }
  r.next.step = state.step + 1;
  r.next.time = state.time + r.eta_eff;
  r.next.log_loss = std::numeric_limits<double>::quiet_NaN();
  r.next.rng_seed = state.rng_seed;
  return r;
}

StepResult md_step(const TrainState& state, const PotentialSet& potentials, const HomogeneousNet& net,
                   const Dataset& data, const Schedule& schedule) {
  const LossGrad eval = net.loss_and_grad(state.theta, data);
  StepResult r = md_step(state, eval, potentials, schedule);
  r.next.log_loss = net.loss_and_grad(r.next.theta, data).log_loss;
  if (!std::isfinite(r.next.log_loss)) throw DivergenceError("non-finite loss after step");
  return r;
}

RunResult run(const RunConfig& config, const std::optional<Dataset>& data, const RecordObserver& observer) {
  if (data) {
    // The data section describes a dataset we will not build; check shapes against the given one.
    RunConfig checked = config;
    checked.data.source = DataSource::File;
    checked.data.path = "<memory>";
    checked.data.dim = static_cast<int>(data->dim());
    validate(checked);
  } else {
    validate(config);
  }
  RunResult result;
  result.data = data ? *data : make_dataset(config.data);
  const HomogeneousNet net(config.net.widths, config.net.activation, config.net.input_bias);
  const PotentialSet potentials = resolve_potentials(config);
  const Schedule schedule = make_schedule(config.train);

  Params theta0 = net.init_params(config.train.init_scheme, config.train.init_scale, config.train.seed);
  TrainState state = init_state(potentials, net, result.data, std::move(theta0), config.train.seed);
  result.initial = state;

  RecordContext ctx{potentials, net, result.data, config.margins, config.tau, {}};
  if (net.depth() >= 2) ctx.initial_balance = balance_residuals(potentials, state.theta);

  const long long log_every = std::max<long long>(1, config.train.log_every);
  long long monotone = 0;
  long long steps_taken = 0;
  double prev_loss = state.log_loss;

  const auto emit = [&](const TrainState& s, const LossGrad& eval, const std::optional<Params>& velocity,
                        double eta_eff) {
    MetricsRecord rec = make_record(ctx, s.theta, eval, velocity);
    rec.step = s.step;
    rec.time = s.time;
    rec.eta_eff = eta_eff;
    result.records.push_back(rec);
    if (observer) observer(rec, s);
  };

  for (;;) {
    const LossGrad eval = net.loss_and_grad(state.theta, result.data);
    state.log_loss = eval.log_loss;
    if (state.step > 0) {
      ++steps_taken;
      if (eval.log_loss <= prev_loss) ++monotone;
    }
    prev_loss = eval.log_loss;

    bool stop = false;
    if (!std::isfinite(eval.log_loss)) {
      result.status = RunStatus::Diverged;
      result.message = "non-finite loss at step " + std::to_string(state.step);
      break;
    }
    if (eval.log_loss <= schedule.stop_log_loss) {
      result.status = RunStatus::LossReached;
      stop = true;
    } else if (schedule.max_time > 0.0 && state.time >= schedule.max_time) {
      result.status = RunStatus::TimeReached;
      stop = true;
    } else if (state.step >= schedule.max_steps) {
      result.status = RunStatus::MaxSteps;
      stop = true;
    }

    // The step from this state is computed even when stopping so that the
    // logged velocity is always the update the integrator would apply.
    std::optional<StepResult> step;
    try {
      step = md_step(state, eval, potentials, schedule);
    } catch (const DivergenceError& e) {
      result.status = RunStatus::Diverged;
      result.message = e.what();
      emit(state, eval, std::nullopt, schedule_lr(schedule, eval.log_loss, eval.margins.q_min > 0.0));
      break;
    }
    if (stop || state.step % log_every == 0) emit(state, eval, step->velocity, step->eta_eff);
    if (stop) break;
    state = std::move(step->next);
  }
  result.final_state = state;
  result.monotone_fraction = steps_taken > 0 ? static_cast<double>(monotone) / static_cast<double>(steps_taken) : 1.0;
  return result;
}

}  // namespace mirrorflow
