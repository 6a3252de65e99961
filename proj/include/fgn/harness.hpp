#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fgn/config.hpp"
#include "fgn/simulation.hpp"
#include "fgn/types.hpp"

namespace fgn {

/// Full description of one experiment. Identical task specs lead to
/// identical data and identical initial heads: per-task streams are seeded
/// from the task's content, not its position, which keeps symmetric
/// configurations exactly symmetric.
struct ExperimentConfig {
  int rounds = 100;
  std::uint64_t seed = 1;
  ProtocolParams protocol;
  MlpSpec shared_spec;
  std::vector<TaskSpec> tasks;
  std::vector<MlpSpec> head_specs;  // one per task
  Index world_repr_dim = 0;         // 0 = the shared network's output width
  Scalar world_noise_std = 0.0;
  HeadOptimizer head_optimizer = HeadOptimizer::kGradientDescent;
  Scalar head_lr = 0;  // 0 = protocol model_lr
  Index batch_size = 0;
  int threads = 0;
  std::string output_path;

  Index num_tasks() const { return static_cast<Index>(tasks.size()); }
  void validate() const;

  /// Three regression tasks with difficulty 10/3/1 on a small linear model.
  static ExperimentConfig defaults();
  static ExperimentConfig from_kv(const KeyValueConfig& kv);
};

/// Builds the world, clients, initial parameters and initial losses.
Simulation build_simulation(const ExperimentConfig& config);

/// FNV-1a over the initial shared and head coefficients; compare_strategies
/// uses it to prove both arms start from the same model.
std::uint64_t initial_params_hash(const Simulation& sim);

/// Runs the configured experiment and returns one record per round. Writes
/// the CSV to config.output_path when set. Deterministic given the seed.
std::vector<RoundMetrics> run_experiment(const ExperimentConfig& config);

/// CSV with a header row and 17-significant-digit floats, so values
/// round-trip exactly. Columns: round, balance, objective, then per task
/// loss_i, inv_rate_i, rel_rate_i, weight_i, actual_norm_i, target_norm_i.
void write_metrics(const std::vector<RoundMetrics>& metrics,
                   const std::string& path);

struct StrategyOutcome {
  std::vector<RoundMetrics> metrics;
  std::vector<Scalar> final_loss;          // per task
  std::vector<Scalar> final_inverse_rate;  // per task
  std::vector<int> half_round;  // first round with loss < initial/2, -1 if none
};

struct StrategyComparison {
  StrategyOutcome fedgradnorm;
  StrategyOutcome equal;
  std::uint64_t initial_hash = 0;
};

/// Runs both weighting strategies from the same seed, world and initial
/// parameters (verified by hash) and summarizes per-task outcomes.
StrategyComparison compare_strategies(const ExperimentConfig& config);

}  // namespace fgn
