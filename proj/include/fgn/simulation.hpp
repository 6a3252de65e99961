#pragma once

#include <vector>

#include "fgn/client.hpp"
#include "fgn/server.hpp"
#include "fgn/types.hpp"

namespace fgn {

struct ProtocolParams {
  int head_steps = 5;
  int shared_steps = 5;
  Scalar model_lr = 2e-4;
  Scalar weight_lr = 4e-3;
  Scalar rate_exponent = 0.9;
  WeightingStrategy strategy = WeightingStrategy::kFedGradNorm;
  BalanceForm form = BalanceForm::kAbsolute;
  int weight_steps = 1;

  RoundOptions round_options() const {
    return {strategy, rate_exponent, weight_lr, model_lr, form, weight_steps};
  }
};

/// One full federation: the shared model, every client's state, the current
/// loss weights, and the protocol constants. Clients own their state
/// exclusively; the server round is the synchronization barrier.
struct Simulation {
  MlpSpec shared_spec;
  ParamVector shared;
  std::vector<ClientState> clients;
  LossWeights weights = LossWeights::uniform(1);
  ProtocolParams protocol;
  int rounds_done = 0;
  int threads = 0;  // 0 = resolve from FEDGRADNORM_THREADS / hardware

  Index num_clients() const { return static_cast<Index>(clients.size()); }
};

/// Thread count actually used for `num_clients` clients, honoring the
/// FEDGRADNORM_THREADS cap (0 or unset = auto).
int resolve_thread_count(int requested, Index num_clients);

/// Runs every client's local round, in parallel when threads allow, and
/// returns the reports ordered by client id. Client states advance in place.
std::vector<GradReport> run_clients(Simulation& sim);

/// One global round: client local rounds, the server round, and the
/// broadcast of the updated shared parameters.
RoundMetrics run_simulation_round(Simulation& sim);

}  // namespace fgn
