#pragma once

#include <cstdint>
#include <optional>
#include <utility>

#include "fgn/mlp.hpp"
#include "fgn/taskgen.hpp"
#include "fgn/types.hpp"

namespace fgn {

enum class HeadOptimizer { kGradientDescent, kAdam };

struct AdamParams {
  Scalar beta1 = 0.9;
  Scalar beta2 = 0.999;
  Scalar eps = 1e-8;
};

struct AdamState {
  Vector m;
  Vector v;
  long step = 0;
};

/// Everything one client owns across rounds: its task and data, the private
/// head, the frozen initial loss, and optimizer bookkeeping. The shared
/// network is never stored here; it arrives fresh from the server each round.
struct ClientState {
  int client_id = 0;
  TaskSpec task;
  LocalDataset data;
  MlpSpec head_spec;
  ParamVector head;
  std::optional<Scalar> initial_loss;  // immutable once set
  bool initial_loss_clamped = false;
  std::uint64_t rng_seed = 0;

  HeadOptimizer head_optimizer = HeadOptimizer::kGradientDescent;
  AdamParams adam;
  std::optional<AdamState> adam_state;
  Scalar head_lr = 0;     // 0 means: use the shared-network learning rate
  Index batch_size = 0;   // 0 means full batch
  long rounds_done = 0;   // drives per-round minibatch reseeding
};

/// What a client sends up after one local round. `avg_grad` is the mean of
/// the shared-network gradients over the local shared-parameter steps;
/// `tail_norm` is its restricted norm; `inverse_rate` is the round loss over
/// the initial loss.
struct GradReport {
  int client_id = 0;
  Gradient avg_grad;
  Scalar tail_norm = 0;
  Scalar inverse_rate = 0;
  Scalar raw_loss = 0;
  bool tiny_loss_clamped = false;
};

/// Floor applied to a round loss before dividing by the initial loss, so the
/// reported rate stays positive for fully converged clients.
inline constexpr Scalar kTinyLossFloor = 1e-12;

/// Floor for the initial loss itself.
inline constexpr Scalar kInitialLossFloor = 1e-8;

/// Measures the full-batch loss at the initial head and shared parameters.
/// Must be called exactly once per client, before the first round.
ClientState set_initial_loss(ClientState state, const ParamVector& shared,
                             const MlpSpec& shared_spec);

/// One local round of alternating minimization: `head_steps` gradient steps
/// on the head with the shared network frozen at the received parameters,
/// then `shared_steps` gradient steps on a local shared copy with the head
/// frozen. The local shared copy is discarded; only the report leaves.
/// The round loss averages the loss evaluated after each shared step.
std::pair<ClientState, GradReport> local_round(ClientState state,
                                               const ParamVector& shared,
                                               const MlpSpec& shared_spec,
                                               int head_steps, int shared_steps,
                                               Scalar model_lr);

}  // namespace fgn
