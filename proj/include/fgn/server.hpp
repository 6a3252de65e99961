#pragma once

#include <string_view>
#include <vector>

#include "fgn/client.hpp"
#include "fgn/mlp.hpp"
#include "fgn/types.hpp"

namespace fgn {

/// Smallest admissible loss weight.
inline constexpr Scalar kWeightFloor = 1e-3;

/// Per-task loss weights: every entry at least kWeightFloor, entries summing
/// to the task count within 1e-9. Construct via uniform() or from_values().
class LossWeights {
 public:
  static LossWeights uniform(Index n);
  static LossWeights from_values(Vector p);

  const Vector& values() const { return p_; }
  Index size() const { return p_.size(); }
  Scalar operator[](Index i) const { return p_[i]; }

 private:
  explicit LossWeights(Vector p) : p_(std::move(p)) {}
  Vector p_;
};

enum class WeightingStrategy { kFedGradNorm, kEqual };
WeightingStrategy strategy_from_string(std::string_view name);
std::string_view to_string(WeightingStrategy s);

/// Per-task distance form inside the balance loss: absolute deviation (the
/// default) or squared deviation, kept for sensitivity runs.
enum class BalanceForm { kAbsolute, kSquared };
BalanceForm balance_form_from_string(std::string_view name);
std::string_view to_string(BalanceForm f);

/// Desired gradient norms for one round: the mean weighted tail norm, each
/// task's relative inverse training rate, and mean_norm * rate^exponent.
struct GradNormTargets {
  Scalar mean_norm = 0;
  Vector rel_rates;
  Vector targets;
};

GradNormTargets compute_targets(const std::vector<GradReport>& reports,
                                const Vector& weights, Scalar rate_exponent);
GradNormTargets compute_targets(const std::vector<GradReport>& reports,
                                const LossWeights& weights, Scalar rate_exponent);

/// Total deviation of the weighted tail norms from the given targets. The
/// targets are taken as constants here and in balance_loss_grad.
Scalar balance_loss(const std::vector<GradReport>& reports, const Vector& weights,
                    const GradNormTargets& targets,
                    BalanceForm form = BalanceForm::kAbsolute);
Scalar balance_loss(const std::vector<GradReport>& reports,
                    const LossWeights& weights, const GradNormTargets& targets,
                    BalanceForm form = BalanceForm::kAbsolute);

/// d balance_loss / d weight, per task, with frozen targets. The absolute
/// form uses subgradient 0 at the kink.
Vector balance_loss_grad(const std::vector<GradReport>& reports,
                         const Vector& weights, const GradNormTargets& targets,
                         BalanceForm form = BalanceForm::kAbsolute);
Vector balance_loss_grad(const std::vector<GradReport>& reports,
                         const LossWeights& weights, const GradNormTargets& targets,
                         BalanceForm form = BalanceForm::kAbsolute);

/// Floor-clamps at kWeightFloor and rescales entries as (p_i * n) / sum so
/// the sum returns to n, repeating if the rescale pushed an entry under the
/// floor again. An all-clamped vector resets to uniform with a warning.
Vector renormalize_weights(Vector p);

/// One gradient step on the weights followed by renormalization. A step that
/// changes nothing returns the input weights bit-identically.
LossWeights update_weights(const LossWeights& weights, const Vector& grad,
                           Scalar weight_lr);

/// The weighted mean of the reported gradients, accumulated in ascending
/// client order so results do not depend on arrival order.
Vector weighted_mean_gradient(const std::vector<GradReport>& reports,
                              const Vector& weights);

/// shared - model_lr * weighted_mean_gradient.
ParamVector aggregate_and_step(const ParamVector& shared,
                               const std::vector<GradReport>& reports,
                               const LossWeights& weights, Scalar model_lr);

/// One round's record: scalar columns, then six per-task columns. Weights and
/// actual norms reflect the weights used for aggregation this round.
struct RoundMetrics {
  int round = 0;
  Scalar balance = 0;    // balance loss at the recorded weights and targets
  Scalar objective = 0;  // (1/N) sum_i weight_i * raw_loss_i
  Vector raw_loss;
  Vector inverse_rate;
  Vector rel_rate;
  Vector weight;
  Vector actual_norm;
  Vector target_norm;
};

struct RoundOptions {
  WeightingStrategy strategy = WeightingStrategy::kFedGradNorm;
  Scalar rate_exponent = 0.9;
  Scalar weight_lr = 4e-3;
  Scalar model_lr = 2e-4;
  BalanceForm form = BalanceForm::kAbsolute;
  int weight_steps = 1;
};

struct RoundResult {
  ParamVector shared;
  LossWeights weights;
  RoundMetrics metrics;
};

/// The server side of one round: compute targets, step and renormalize the
/// weights (skipped under the equal strategy), aggregate the reported
/// gradients with the updated weights, and step the shared parameters.
RoundResult run_round(const RoundOptions& options, const ParamVector& shared,
                      std::vector<GradReport> reports, const LossWeights& weights);

}  // namespace fgn
