#pragma once

// Mirror descent in the dual variables z_i = grad R_i(W_i) with the
// exponential loss and the 1/L time-rescaling schedule.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mirrorflow/config.hpp"
#include "mirrorflow/diagnostics.hpp"
#include "mirrorflow/network.hpp"

namespace mirrorflow {

struct Schedule {
  double base_lr = 1e-3;
  bool rescale_enabled = false;
  double rescale_threshold = 0.1;
  double rescale_factor = 0.1;
  long long max_steps = 1000;
  double stop_log_loss = -115.12925464970229;  // ln(1e-50)
  double max_time = 0.0;                       // 0: no limit
};

Schedule make_schedule(const TrainConfig& train);

/// Effective step size. When rescaling applies this is factor * lr / L.
double schedule_lr(const Schedule& schedule, double log_loss, bool all_classified);
/// True when the rescaled branch of schedule_lr is taken.
bool rescale_active(const Schedule& schedule, double log_loss, bool all_classified);

struct TrainState {
  Params theta;
  Params dual;
  long long step = 0;
  double time = 0.0;
  double log_loss = 0.0;
  std::uint64_t rng_seed = 0;
};

TrainState init_state(const PotentialSet& potentials, const HomogeneousNet& net, const Dataset& data,
                      Params theta0, std::uint64_t seed = 0);

struct StepResult {
  TrainState next;
  double eta_eff = 0.0;
  /// (theta_{k+1} - theta_k) / eta_eff.
  Params velocity;
};

/// One step from `state` given the loss evaluation at state.theta. The
/// returned state's log_loss is left as NaN; the next evaluation fills it.
StepResult md_step(const TrainState& state, const LossGrad& eval, const PotentialSet& potentials,
                   const Schedule& schedule);
/// Full step including the loss at the new point.
StepResult md_step(const TrainState& state, const PotentialSet& potentials, const HomogeneousNet& net,
                   const Dataset& data, const Schedule& schedule);

enum class RunStatus { MaxSteps, LossReached, TimeReached, Diverged };

std::string_view to_string(RunStatus status);

struct RunResult {
  std::vector<MetricsRecord> records;
  TrainState initial;
  TrainState final_state;
  RunStatus status = RunStatus::MaxSteps;
  std::string message;
  Dataset data;
  /// Fraction of steps whose log-loss did not increase.
  double monotone_fraction = 1.0;
};

using RecordObserver = std::function<void(const MetricsRecord&, const TrainState&)>;

/// Trains per config. The data is generated from config.data unless given.
RunResult run(const RunConfig& config, const std::optional<Dataset>& data = std::nullopt,
              const RecordObserver& observer = {});

}  // namespace mirrorflow
