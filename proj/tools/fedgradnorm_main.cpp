#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>

#include "fgn/harness.hpp"

namespace {

void print_outcome(const char* name, const fgn::StrategyOutcome& outcome) {
  std::printf("%s:\n", name);
  for (std::size_t i = 0; i < outcome.final_loss.size(); ++i) {
    std::printf("  task %zu: final loss %.6g  normalized %.6g  halved at round %d\n",
                i, outcome.final_loss[i], outcome.final_inverse_rate[i],
                outcome.half_round[i]);
  }
}

std::string with_suffix(const std::string& path, const std::string& suffix) {
  const auto dot = path.rfind('.');
  if (dot == std::string::npos || path.find('/', dot) != std::string::npos) {
    return path + suffix;
  }
  return path.substr(0, dot) + suffix + path.substr(dot);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "FedGradNorm simulator: personalized federated multi-task training with\n"
      "gradient-norm balanced loss weights, plus an equal-weighting baseline."};

  std::string config_path, strategy, out_path;
  long seed = -1;
  int rounds = -1;
  bool compare = false;
  app.add_option("--config", config_path, "key = value configuration file");
  app.add_option("--strategy", strategy, "fedgradnorm or equal")
      ->check(CLI::IsMember({"fedgradnorm", "equal"}));
  app.add_option("--seed", seed, "experiment seed");
  app.add_option("--rounds", rounds, "number of global rounds");
  app.add_option("--out", out_path, "metrics CSV path");
  app.add_flag("--compare", compare, "run both strategies on the same world");

  CLI11_PARSE(app, argc, argv);

  try {
    fgn::ExperimentConfig config =
        config_path.empty()
            ? fgn::ExperimentConfig::defaults()
            : fgn::ExperimentConfig::from_kv(fgn::KeyValueConfig::parse_file(config_path));
    if (!strategy.empty()) {
      config.protocol.strategy = fgn::strategy_from_string(strategy);
    }
    if (seed >= 0) config.seed = static_cast<std::uint64_t>(seed);
    if (rounds >= 0) config.rounds = rounds;
    if (!out_path.empty()) config.output_path = out_path;

    if (compare) {
      const fgn::StrategyComparison comparison = fgn::compare_strategies(config);
      print_outcome("fedgradnorm", comparison.fedgradnorm);
      print_outcome("equal", comparison.equal);
      if (!config.output_path.empty()) {
        const std::string fgn_path = with_suffix(config.output_path, "_fedgradnorm");
        const std::string equal_path = with_suffix(config.output_path, "_equal");
        fgn::write_metrics(comparison.fedgradnorm.metrics, fgn_path);
        fgn::write_metrics(comparison.equal.metrics, equal_path);
        std::printf("metrics written to %s and %s\n", fgn_path.c_str(),
                    equal_path.c_str());
      }
      return 0;
    }

    const std::vector<fgn::RoundMetrics> metrics = fgn::run_experiment(config);
    const fgn::RoundMetrics& last = metrics.back();
    std::printf("strategy %s: %d rounds, final objective %.6g, final weights [",
                std::string(to_string(config.protocol.strategy)).c_str(),
                config.rounds, last.objective);
    for (fgn::Index i = 0; i < last.weight.size(); ++i) {
      std::printf("%s%.4f", i == 0 ? "" : ", ", last.weight[i]);
    }
    std::printf("]\n");
    if (!config.output_path.empty()) {
      std::printf("metrics written to %s\n", config.output_path.c_str());
    }
    return 0;
  } catch (const fgn::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
