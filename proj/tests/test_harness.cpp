#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fgn/harness.hpp"

using namespace fgn;

namespace {

ExperimentConfig two_task_config(Scalar difficulty0, Scalar difficulty1,
                                 std::uint64_t seed, int rounds) {
  ExperimentConfig config;
  config.seed = seed;
  config.rounds = rounds;
  config.shared_spec = MlpSpec{{6, 2}, {}};
  config.protocol.head_steps = 2;
  config.protocol.shared_steps = 2;
  config.protocol.model_lr = 0.01;
  config.protocol.weight_lr = 0.02;
  for (int i = 0; i < 2; ++i) {
    TaskSpec task;
    task.task_id = i;
    task.kind = TaskKind::kRegression;
    task.difficulty_scale = i == 0 ? difficulty0 : difficulty1;
    task.samples = 24;
    config.tasks.push_back(task);
    config.head_specs.push_back(MlpSpec{{2, 1}, {}});
  }
  return config;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

int count_fields(const std::string& line) {
  int fields = 1;
  for (const char c : line) fields += c == ',';
  return fields;
}

}  // namespace

TEST_CASE("key-value config parsing") {
  const std::string text =
      "# comment\n"
      "experiment.rounds = 7\n"
      "protocol.model_lr = 0.5\n"
      "model.shared_widths = 4, 2\n"
      "protocol.strategy = equal\n"
      "\n"
      "experiment.output = out.csv\n";
  const KeyValueConfig kv = KeyValueConfig::parse_string(text);
  CHECK(kv.get_long("experiment.rounds", 0) == 7);
  CHECK(kv.get_double("protocol.model_lr", 0) == 0.5);
  CHECK(kv.get_string("experiment.output", "") == "out.csv");
  CHECK(kv.get_list("model.shared_widths") == std::vector<double>{4, 2});
  CHECK(kv.get_long("missing.key", 42) == 42);

  CHECK_THROWS_WITH_AS(KeyValueConfig::parse_string("no equals sign\n"),
                       doctest::Contains("line 1"), Error);
  CHECK_THROWS_AS(KeyValueConfig::parse_string("key = x\n").get_double("key", 0),
                  Error);
}

TEST_CASE("experiment config comes out of key-value text") {
  const std::string text =
      "experiment.rounds = 3\n"
      "experiment.seed = 11\n"
      "protocol.strategy = equal\n"
      "protocol.rate_exponent = 1.5\n"
      "model.shared_widths = 6,3\n"
      "world.noise_std = 0.25\n"
      "task.0.kind = regression\n"
      "task.0.difficulty = 4\n"
      "task.0.samples = 40\n"
      "task.1.kind = classification\n"
      "task.1.classes = 3\n"
      "task.1.samples = 50\n";
  const ExperimentConfig config =
      ExperimentConfig::from_kv(KeyValueConfig::parse_string(text));
  CHECK(config.rounds == 3);
  CHECK(config.seed == 11);
  CHECK(config.protocol.strategy == WeightingStrategy::kEqual);
  CHECK(config.protocol.rate_exponent == 1.5);
  CHECK(config.tasks.size() == 2);
  CHECK(config.tasks[1].classes == 3);
  CHECK(config.head_specs[1].output_width() == 3);
  CHECK(config.world_noise_std == 0.25);

  CHECK_THROWS_WITH_AS(
      ExperimentConfig::from_kv(KeyValueConfig::parse_string("protocal.strategy = x\n")),
      doctest::Contains("unknown key"), Error);
  CHECK_THROWS_AS(
      ExperimentConfig::from_kv(KeyValueConfig::parse_string("task.0.banana = 1\n")),
      Error);
}

TEST_CASE("config validation catches structural mistakes") {
  ExperimentConfig config = two_task_config(1, 1, 1, 1);
  SUBCASE("head width mismatch") {
    config.head_specs[0] = MlpSpec{{3, 1}, {}};
    CHECK_THROWS_WITH_AS(config.validate(), doctest::Contains("head 0"), Error);
  }
  SUBCASE("representation must compress") {
    config.world_repr_dim = 6;
    CHECK_THROWS_AS(config.validate(), Error);
  }
  SUBCASE("task ids follow positions") {
    config.tasks[1].task_id = 5;
    CHECK_THROWS_AS(config.validate(), Error);
  }
  SUBCASE("at least two tasks") {
    config.tasks.pop_back();
    config.head_specs.pop_back();
    CHECK_THROWS_AS(config.validate(), Error);
  }
}

TEST_CASE("a one-round symmetric experiment keeps unit weights") {
  const ExperimentConfig config = two_task_config(2.0, 2.0, 5, 1);
  const std::vector<RoundMetrics> metrics = run_experiment(config);
  REQUIRE(metrics.size() == 1);
  CHECK(metrics[0].round == 1);
  CHECK(metrics[0].weight[0] == 1.0);
  CHECK(metrics[0].weight[1] == 1.0);
}

TEST_CASE("the equal strategy never moves a weight") {
  ExperimentConfig config = two_task_config(5.0, 1.0, 6, 8);
  config.protocol.strategy = WeightingStrategy::kEqual;
  for (const RoundMetrics& m : run_experiment(config)) {
    CHECK(m.weight[0] == 1.0);
    CHECK(m.weight[1] == 1.0);
  }
}

TEST_CASE("every recorded round satisfies the weight invariants") {
  const ExperimentConfig config = two_task_config(8.0, 1.0, 7, 50);
  for (const RoundMetrics& m : run_experiment(config)) {
    CHECK(std::abs(m.weight.sum() - 2.0) <= 1e-9);
    CHECK(m.weight.minCoeff() >= 1e-3);
  }
}

TEST_CASE("the protocol loop matches a straight-line reference run") {
  const ExperimentConfig config = two_task_config(4.0, 1.0, 13, 3);
  const std::vector<RoundMetrics> metrics = run_experiment(config);

  // Reference: the same equations unrolled inline on top of the raw network
  // primitives, no client/server machinery involved.
  Simulation sim = build_simulation(config);
  const int n = 2;
  Vector weights = Vector::Ones(n);
  ParamVector shared = sim.shared;
  std::vector<ParamVector> heads;
  std::vector<Scalar> initial;
  for (const ClientState& c : sim.clients) {
    heads.push_back(c.head);
    initial.push_back(*c.initial_loss);
  }
  const Scalar lr = config.protocol.model_lr;

  for (int round = 0; round < config.rounds; ++round) {
    std::vector<Vector> avg_grads;
    std::vector<Scalar> tail_norms, inverse_rates, raw_losses;
    for (int i = 0; i < n; ++i) {
      const ClientState& c = sim.clients[static_cast<std::size_t>(i)];
      const Matrix& X = c.data.inputs;
      const Matrix& Y = c.data.labels;

      const Matrix repr = forward(sim.shared_spec, shared, X);
      for (int j = 0; j < config.protocol.head_steps; ++j) {
        const Matrix pred = forward(c.head_spec, heads[static_cast<std::size_t>(i)], repr);
        const Matrix lg = loss_grad(c.task.kind, pred, Y);
        const Gradient gh =
            backward(c.head_spec, heads[static_cast<std::size_t>(i)], repr, lg);
        heads[static_cast<std::size_t>(i)].values -= lr * gh.values;
      }

      ParamVector local = shared;
      Vector grad_sum = Vector::Zero(shared.size());
      Scalar loss_sum = 0;
      Matrix cur = forward(sim.shared_spec, local, X);
      for (int j = 0; j < config.protocol.shared_steps; ++j) {
        const Matrix pred = forward(c.head_spec, heads[static_cast<std::size_t>(i)], cur);
        const Matrix lg = loss_grad(c.task.kind, pred, Y);
        Matrix repr_grad;
        backward(c.head_spec, heads[static_cast<std::size_t>(i)], cur, lg, &repr_grad);
        const Gradient g = backward(sim.shared_spec, local, X, repr_grad);
        grad_sum += g.values;
        local.values -= lr * g.values;
        cur = forward(sim.shared_spec, local, X);
        loss_sum +=
            loss(c.task.kind, forward(c.head_spec, heads[static_cast<std::size_t>(i)], cur), Y);
      }
      Vector avg = grad_sum / Scalar(config.protocol.shared_steps);
      const Scalar raw = loss_sum / Scalar(config.protocol.shared_steps);
      const Index tail_offset = shared.layout->tail_offset();
      tail_norms.push_back(avg.tail(avg.size() - tail_offset).norm());
      raw_losses.push_back(raw);
      inverse_rates.push_back(raw / initial[static_cast<std::size_t>(i)]);
      avg_grads.push_back(std::move(avg));
    }

    // Server block: targets, one weight step, renormalize, aggregate.
    Scalar norm_sum = 0, rate_sum = 0;
    for (int i = 0; i < n; ++i) {
      norm_sum += weights[i] * tail_norms[static_cast<std::size_t>(i)];
      rate_sum += inverse_rates[static_cast<std::size_t>(i)];
    }
    const Scalar mean_norm = norm_sum / n;
    const Scalar mean_rate = rate_sum / n;
    Vector targets(n);
    for (int i = 0; i < n; ++i) {
      targets[i] = mean_norm * std::pow(inverse_rates[static_cast<std::size_t>(i)] / mean_rate,
                                        config.protocol.rate_exponent);
    }
    Vector stepped(n);
    for (int i = 0; i < n; ++i) {
      const Scalar deviation =
          weights[i] * tail_norms[static_cast<std::size_t>(i)] - targets[i];
      const Scalar sign = deviation > 0 ? 1.0 : (deviation < 0 ? -1.0 : 0.0);
      stepped[i] =
          weights[i] -
          config.protocol.weight_lr * tail_norms[static_cast<std::size_t>(i)] * sign;
    }
    if (!(stepped.array() == weights.array()).all()) {
      for (int i = 0; i < n; ++i) stepped[i] = std::max(stepped[i], 1e-3);
      Scalar sum = 0;
      for (int i = 0; i < n; ++i) sum += stepped[i];
      for (int i = 0; i < n; ++i) stepped[i] = (stepped[i] * n) / sum;
    }
    weights = stepped;

    Vector acc = Vector::Zero(shared.size());
    for (int i = 0; i < n; ++i) {
      acc += weights[i] * avg_grads[static_cast<std::size_t>(i)];
    }
    shared.values = shared.values - lr * (acc / Scalar(n)).eval();

    const RoundMetrics& m = metrics[static_cast<std::size_t>(round)];
    for (int i = 0; i < n; ++i) {
      CHECK(m.weight[i] == doctest::Approx(weights[i]).epsilon(1e-12));
      CHECK(m.raw_loss[i] ==
            doctest::Approx(raw_losses[static_cast<std::size_t>(i)]).epsilon(1e-12));
      CHECK(m.target_norm[i] == doctest::Approx(targets[i]).epsilon(1e-12));
      CHECK(m.actual_norm[i] ==
            doctest::Approx(weights[i] * tail_norms[static_cast<std::size_t>(i)])
                .epsilon(1e-12));
    }
  }

  // The reference ends at the same shared parameters the simulation reached.
  Simulation replay = build_simulation(config);
  for (int k = 0; k < config.rounds; ++k) run_simulation_round(replay);
  CHECK((replay.shared.values - shared.values).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("metrics files") {
  SUBCASE("an empty run writes only the header") {
    const std::string path = "/tmp/fgn_metrics_empty.csv";
    write_metrics({}, path);
    const std::string content = read_file(path);
    CHECK(content == "round,balance,objective\n");
  }
  SUBCASE("rows and columns follow the schema") {
    const ExperimentConfig config = two_task_config(3.0, 1.0, 19, 3);
    const std::vector<RoundMetrics> metrics = run_experiment(config);
    const std::string path = "/tmp/fgn_metrics_shape.csv";
    write_metrics(metrics, path);
    std::istringstream lines(read_file(path));
    std::string line;
    int rows = 0;
    while (std::getline(lines, line)) {
      CHECK(count_fields(line) == 3 + 6 * 2);
      ++rows;
    }
    CHECK(rows == 4);  // header + 3 rounds
  }
  SUBCASE("floats round-trip exactly") {
    const ExperimentConfig config = two_task_config(3.0, 1.0, 19, 2);
    const std::vector<RoundMetrics> metrics = run_experiment(config);
    const std::string path = "/tmp/fgn_metrics_roundtrip.csv";
    write_metrics(metrics, path);

    std::istringstream lines(read_file(path));
    std::string line;
    std::getline(lines, line);  // header
    for (const RoundMetrics& m : metrics) {
      REQUIRE(std::getline(lines, line));
      std::istringstream fields(line);
      std::string field;
      std::getline(fields, field, ',');
      CHECK(std::stoi(field) == m.round);
      std::getline(fields, field, ',');
      CHECK(std::stod(field) == m.balance);
      std::getline(fields, field, ',');
      CHECK(std::stod(field) == m.objective);
      for (Index i = 0; i < 2; ++i) {
        const Scalar expected[] = {m.raw_loss[i],    m.inverse_rate[i],
                                   m.rel_rate[i],    m.weight[i],
                                   m.actual_norm[i], m.target_norm[i]};
        for (const Scalar e : expected) {
          std::getline(fields, field, ',');
          CHECK(std::stod(field) == e);
        }
      }
    }
  }
  SUBCASE("unwritable paths fail loudly") {
    CHECK_THROWS_AS(write_metrics({}, "/nonexistent-dir/metrics.csv"), Error);
  }
}

TEST_CASE("strategy comparison") {
  SUBCASE("identical tasks give identical trajectories") {
    const ExperimentConfig config = two_task_config(2.0, 2.0, 23, 5);
    const StrategyComparison comparison = compare_strategies(config);
    for (int k = 0; k < 5; ++k) {
      const auto idx = static_cast<std::size_t>(k);
      for (Index i = 0; i < 2; ++i) {
        CHECK(comparison.fedgradnorm.metrics[idx].raw_loss[i] ==
              comparison.equal.metrics[idx].raw_loss[i]);
        CHECK(comparison.fedgradnorm.metrics[idx].weight[i] == 1.0);
      }
    }
  }
  SUBCASE("asymmetric worlds produce a full summary") {
    const ExperimentConfig config = two_task_config(6.0, 1.0, 29, 10);
    const StrategyComparison comparison = compare_strategies(config);
    CHECK(comparison.initial_hash != 0);
    for (const StrategyOutcome* outcome :
         {&comparison.fedgradnorm, &comparison.equal}) {
      REQUIRE(outcome->final_loss.size() == 2);
      for (const Scalar v : outcome->final_loss) CHECK(std::isfinite(v));
      REQUIRE(outcome->half_round.size() == 2);
    }
  }
}

TEST_CASE("identical seeds give byte-identical metrics at any thread count") {
  ExperimentConfig config = two_task_config(7.0, 1.0, 31, 6);
  config.output_path = "/tmp/fgn_threads_1.csv";
  config.threads = 1;
  run_experiment(config);
  config.output_path = "/tmp/fgn_threads_4.csv";
  config.threads = 4;
  run_experiment(config);
  CHECK(read_file("/tmp/fgn_threads_1.csv") == read_file("/tmp/fgn_threads_4.csv"));
}

TEST_CASE("divergence aborts with the failing round") {
  ExperimentConfig config = two_task_config(4.0, 1.0, 37, 50);
  config.protocol.model_lr = 1e18;
  try {
    run_experiment(config);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.round() >= 1);
    CHECK(std::string(e.what()).find("round") != std::string::npos);
  }
}

TEST_CASE("default configuration is runnable") {
  ExperimentConfig config = ExperimentConfig::defaults();
  config.rounds = 2;
  const std::vector<RoundMetrics> metrics = run_experiment(config);
  CHECK(metrics.size() == 2);
  CHECK(metrics[1].objective > 0.0);
}
