#include "fgn/harness.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "fgn/seeding.hpp"

namespace fgn {

namespace {

// Streams are keyed by task content so that identical task specs receive
// identical data and identical initial heads regardless of their position.
std::uint64_t task_content_hash(const TaskSpec& task, const MlpSpec& head_spec) {
  std::uint64_t h = fnv1a(to_string(task.kind));
  h = fnv1a_u64(static_cast<std::uint64_t>(task.classes), h);
  h = fnv1a_f64(task.difficulty_scale, h);
  h = fnv1a_u64(static_cast<std::uint64_t>(task.samples), h);
  for (const Index w : head_spec.layer_widths) {
    h = fnv1a_u64(static_cast<std::uint64_t>(w), h);
  }
  for (const Activation a : head_spec.activations) h = fnv1a(to_string(a), h);
  return h;
}

std::string format_value(Scalar v) {
  char buffer[40];
  std::snprintf(buffer, sizeof(buffer), "%.17g", v);
  return buffer;
}

StrategyOutcome summarize(const Simulation& sim, std::vector<RoundMetrics> metrics) {
  StrategyOutcome outcome;
  const Index n = sim.num_clients();
  outcome.final_loss.assign(static_cast<std::size_t>(n), 0);
  outcome.final_inverse_rate.assign(static_cast<std::size_t>(n), 0);
  outcome.half_round.assign(static_cast<std::size_t>(n), -1);
  for (Index i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    const Scalar initial = *sim.clients[idx].initial_loss;
    for (const RoundMetrics& m : metrics) {
      if (m.raw_loss[i] < initial / 2) {
        outcome.half_round[idx] = m.round;
        break;
      }
    }
    if (!metrics.empty()) {
      outcome.final_loss[idx] = metrics.back().raw_loss[i];
      outcome.final_inverse_rate[idx] = metrics.back().inverse_rate[i];
    }
  }
  outcome.metrics = std::move(metrics);
  return outcome;
}

std::vector<RoundMetrics> run_rounds(Simulation& sim, int rounds) {
  std::vector<RoundMetrics> metrics;
  metrics.reserve(static_cast<std::size_t>(rounds));
  for (int k = 1; k <= rounds; ++k) {
    try {
      metrics.push_back(run_simulation_round(sim));
    } catch (const DivergenceError& e) {
      throw DivergenceError("round " + std::to_string(k) + ": " + e.what(), k);
    }
  }
  return metrics;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (rounds < 1) throw Error("experiment: rounds must be >= 1");
  if (tasks.size() < 2) throw Error("experiment: need at least 2 tasks");
  if (head_specs.size() != tasks.size()) {
    throw Error("experiment: " + std::to_string(head_specs.size()) +
                " head specs for " + std::to_string(tasks.size()) + " tasks");
  }
  shared_spec.validate();
  if (!(protocol.model_lr > 0) || !(protocol.weight_lr > 0)) {
    throw Error("experiment: learning rates must be > 0");
  }
  if (protocol.rate_exponent < 0) {
    throw Error("experiment: rate exponent must be >= 0");
  }
  if (protocol.head_steps < 1 || protocol.shared_steps < 1 ||
      protocol.weight_steps < 1) {
    throw Error("experiment: step counts must be >= 1");
  }
  if (world_noise_std < 0) throw Error("experiment: noise_std must be >= 0");
  if (head_lr < 0) throw Error("experiment: head_lr must be >= 0");
  if (batch_size < 0) throw Error("experiment: batch_size must be >= 0");
  const Index repr = world_repr_dim > 0 ? world_repr_dim : shared_spec.output_width();
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (tasks[i].task_id != static_cast<int>(i)) {
      throw Error("experiment: task " + std::to_string(i) + " has id " +
                  std::to_string(tasks[i].task_id) + ", expected " + std::to_string(i));
    }
    tasks[i].validate();
    head_specs[i].validate();
    if (head_specs[i].input_width() != shared_spec.output_width()) {
      throw Error("experiment: head " + std::to_string(i) + " expects " +
                  std::to_string(head_specs[i].input_width()) +
                  " inputs but the shared network outputs " +
                  std::to_string(shared_spec.output_width()));
    }
    if (head_specs[i].output_width() != tasks[i].label_width()) {
      throw Error("experiment: head " + std::to_string(i) + " outputs " +
                  std::to_string(head_specs[i].output_width()) + " values but task " +
                  std::to_string(i) + " labels are " +
                  std::to_string(tasks[i].label_width()) + " wide");
    }
  }
  if (repr >= shared_spec.input_width()) {
    throw Error("experiment: representation dim " + std::to_string(repr) +
                " must be smaller than the input dim " +
                std::to_string(shared_spec.input_width()));
  }
}

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig config;
  config.shared_spec = MlpSpec{{8, 4}, {}};
  const Scalar difficulties[] = {10.0, 3.0, 1.0};
  for (int i = 0; i < 3; ++i) {
    TaskSpec task;
    task.task_id = i;
    task.kind = TaskKind::kRegression;
    task.difficulty_scale = difficulties[i];
    task.samples = 256;
    config.tasks.push_back(task);
    config.head_specs.push_back(MlpSpec{{4, 1}, {}});
  }
  return config;
}

ExperimentConfig ExperimentConfig::from_kv(const KeyValueConfig& kv) {
  static const std::set<std::string> known = {
      "experiment.rounds",      "experiment.seed",
      "experiment.output",      "experiment.threads",
      "protocol.strategy",      "protocol.head_steps",
      "protocol.shared_steps",  "protocol.model_lr",
      "protocol.weight_lr",     "protocol.rate_exponent",
      "protocol.balance_form",  "protocol.weight_steps",
      "model.shared_widths",    "model.shared_activations",
      "model.head_optimizer",   "model.head_lr",
      "model.batch_size",       "world.repr_dim",
      "world.noise_std"};
  static const std::set<std::string> known_task_fields = {
      "kind", "classes", "difficulty", "samples", "head_widths",
      "head_activations"};

  int num_tasks = 0;
  for (const std::string& key : kv.keys()) {
    if (key.rfind("task.", 0) == 0) {
      const auto rest = key.substr(5);
      const auto dot = rest.find('.');
      if (dot == std::string::npos) throw Error("config: bad task key '" + key + "'");
      int index = 0;
      try {
        index = std::stoi(rest.substr(0, dot));
      } catch (const std::exception&) {
        throw Error("config: bad task index in '" + key + "'");
      }
      if (!known_task_fields.count(rest.substr(dot + 1))) {
        throw Error("config: unknown key '" + key + "'");
      }
      num_tasks = std::max(num_tasks, index + 1);
    } else if (!known.count(key)) {
      throw Error("config: unknown key '" + key + "'");
    }
  }

  ExperimentConfig config = defaults();
  config.rounds = static_cast<int>(kv.get_long("experiment.rounds", config.rounds));
  config.seed = static_cast<std::uint64_t>(kv.get_long("experiment.seed",
                                                       static_cast<long>(config.seed)));
  config.output_path = kv.get_string("experiment.output", config.output_path);
  config.threads = static_cast<int>(kv.get_long("experiment.threads", config.threads));

  ProtocolParams& p = config.protocol;
  p.strategy = strategy_from_string(
      kv.get_string("protocol.strategy", std::string(to_string(p.strategy))));
  p.head_steps = static_cast<int>(kv.get_long("protocol.head_steps", p.head_steps));
  p.shared_steps = static_cast<int>(kv.get_long("protocol.shared_steps", p.shared_steps));
  p.model_lr = kv.get_double("protocol.model_lr", p.model_lr);
  p.weight_lr = kv.get_double("protocol.weight_lr", p.weight_lr);
  p.rate_exponent = kv.get_double("protocol.rate_exponent", p.rate_exponent);
  p.form = balance_form_from_string(
      kv.get_string("protocol.balance_form", std::string(to_string(p.form))));
  p.weight_steps = static_cast<int>(kv.get_long("protocol.weight_steps", p.weight_steps));

  if (kv.has("model.shared_widths")) {
    config.shared_spec.layer_widths.clear();
    for (const double w : kv.get_list("model.shared_widths")) {
      config.shared_spec.layer_widths.push_back(static_cast<Index>(w));
    }
  }
  config.shared_spec.activations.clear();
  for (const std::string& name : kv.get_string_list("model.shared_activations")) {
    config.shared_spec.activations.push_back(activation_from_string(name));
  }
  config.head_optimizer =
      kv.get_string("model.head_optimizer", "gd") == "adam"
          ? HeadOptimizer::kAdam
          : HeadOptimizer::kGradientDescent;
  config.head_lr = kv.get_double("model.head_lr", config.head_lr);
  config.batch_size = static_cast<Index>(kv.get_long("model.batch_size",
                                                     static_cast<long>(config.batch_size)));
  config.world_repr_dim = static_cast<Index>(kv.get_long("world.repr_dim", 0));
  config.world_noise_std = kv.get_double("world.noise_std", config.world_noise_std);

  if (num_tasks > 0) {
    config.tasks.clear();
    config.head_specs.clear();
    for (int i = 0; i < num_tasks; ++i) {
      const std::string prefix = "task." + std::to_string(i) + ".";
      TaskSpec task;
      task.task_id = i;
      task.kind = task_kind_from_string(kv.get_string(prefix + "kind", "regression"));
      task.classes = static_cast<int>(kv.get_long(prefix + "classes", 0));
      task.difficulty_scale = kv.get_double(prefix + "difficulty", 1.0);
      task.samples = static_cast<Index>(kv.get_long(prefix + "samples", 256));
      config.tasks.push_back(task);

      MlpSpec head;
      if (kv.has(prefix + "head_widths")) {
        for (const double w : kv.get_list(prefix + "head_widths")) {
          head.layer_widths.push_back(static_cast<Index>(w));
        }
      } else {
        head.layer_widths = {config.shared_spec.output_width(), task.label_width()};
      }
      for (const std::string& name : kv.get_string_list(prefix + "head_activations")) {
        head.activations.push_back(activation_from_string(name));
      }
      config.head_specs.push_back(std::move(head));
    }
  }
  config.validate();
  return config;
}

Simulation build_simulation(const ExperimentConfig& config) {
  config.validate();
  const Index repr =
      config.world_repr_dim > 0 ? config.world_repr_dim : config.shared_spec.output_width();
  const SyntheticWorld world =
      generate_world(config.shared_spec.input_width(), repr, config.tasks,
                     mix_seed(config.seed, fnv1a("world")), config.world_noise_std);

  Simulation sim;
  sim.shared_spec = config.shared_spec;
  sim.shared = init_params(config.shared_spec, mix_seed(config.seed, fnv1a("shared-init")));
  sim.weights = LossWeights::uniform(config.num_tasks());
  sim.protocol = config.protocol;
  sim.threads = config.threads;

  for (std::size_t i = 0; i < config.tasks.size(); ++i) {
    const TaskSpec& task = config.tasks[i];
    const std::uint64_t content = task_content_hash(task, config.head_specs[i]);
    ClientState client;
    client.client_id = static_cast<int>(i);
    client.task = task;
    client.data = sample_dataset(world, task,
                                 mix_seed(config.seed, fnv1a_u64(content, fnv1a("data"))));
    client.head_spec = config.head_specs[i];
    client.head = init_params(config.head_specs[i],
                              mix_seed(config.seed, fnv1a_u64(content, fnv1a("head-init"))));
    client.rng_seed = mix_seed(config.seed, fnv1a_u64(content, fnv1a("batch")));
    client.head_optimizer = config.head_optimizer;
    client.head_lr = config.head_lr;
    client.batch_size = config.batch_size;
    client = set_initial_loss(std::move(client), sim.shared, sim.shared_spec);
    sim.clients.push_back(std::move(client));
  }
  return sim;
}

std::uint64_t initial_params_hash(const Simulation& sim) {
  std::uint64_t h = fnv1a_bytes(sim.shared.values.data(),
                                sizeof(Scalar) * static_cast<std::size_t>(sim.shared.size()));
  for (const ClientState& c : sim.clients) {
    h = fnv1a_bytes(c.head.values.data(),
                    sizeof(Scalar) * static_cast<std::size_t>(c.head.size()), h);
  }
  return h;
}

std::vector<RoundMetrics> run_experiment(const ExperimentConfig& config) {
  Simulation sim = build_simulation(config);
  std::vector<RoundMetrics> metrics = run_rounds(sim, config.rounds);
  if (!config.output_path.empty()) write_metrics(metrics, config.output_path);
  return metrics;
}

void write_metrics(const std::vector<RoundMetrics>& metrics, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("write_metrics: cannot open '" + path + "' for writing");

  out << "round,balance,objective";
  const Index n = metrics.empty() ? 0 : metrics.front().raw_loss.size();
  for (Index i = 0; i < n; ++i) {
    out << ",loss_" << i << ",inv_rate_" << i << ",rel_rate_" << i << ",weight_"
        << i << ",actual_norm_" << i << ",target_norm_" << i;
  }
  out << "\n";
  for (const RoundMetrics& m : metrics) {
    out << m.round << ',' << format_value(m.balance) << ','
        << format_value(m.objective);
    for (Index i = 0; i < n; ++i) {
      out << ',' << format_value(m.raw_loss[i]) << ',' << format_value(m.inverse_rate[i])
          << ',' << format_value(m.rel_rate[i]) << ',' << format_value(m.weight[i])
          << ',' << format_value(m.actual_norm[i]) << ',' << format_value(m.target_norm[i]);
    }
    out << "\n";
  }
  out.flush();
  if (!out) throw Error("write_metrics: failed while writing '" + path + "'");
}

StrategyComparison compare_strategies(const ExperimentConfig& config) {
  StrategyComparison comparison;

  ExperimentConfig arm = config;
  arm.output_path.clear();

  arm.protocol.strategy = WeightingStrategy::kFedGradNorm;
  Simulation fgn_sim = build_simulation(arm);
  comparison.initial_hash = initial_params_hash(fgn_sim);

  arm.protocol.strategy = WeightingStrategy::kEqual;
  Simulation equal_sim = build_simulation(arm);
  if (initial_params_hash(equal_sim) != comparison.initial_hash) {
    throw Error("compare_strategies: the two arms started from different parameters");
  }

  std::vector<RoundMetrics> fgn_metrics = run_rounds(fgn_sim, config.rounds);
  comparison.fedgradnorm = summarize(fgn_sim, std::move(fgn_metrics));
  std::vector<RoundMetrics> equal_metrics = run_rounds(equal_sim, config.rounds);
  comparison.equal = summarize(equal_sim, std::move(equal_metrics));
  return comparison;
}

}  // namespace fgn
