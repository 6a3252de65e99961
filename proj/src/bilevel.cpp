#include "fgn/bilevel.hpp"

#include <cmath>
#include <memory>
#include <random>
#include <string>

namespace fgn {

namespace {

void require_config(const BilevelProblem& problem, const ItdConfig& config) {
  if (problem.upper_dim < 1 || problem.lower_dim < 1) {
    throw Error("itd_solve: dimensions must be >= 1");
  }
  if (!problem.upper_fn || !problem.lower_fn || !problem.upper_grad_upper ||
      !problem.lower_grad_lower) {
    throw Error("itd_solve: missing objective or gradient oracle");
  }
  if (config.outer_iters < 1 || config.inner_iters < 1) {
    throw Error("itd_solve: iteration counts must be >= 1");
  }
  if (!(config.inner_lr > 0) || !(config.outer_lr > 0)) {
    throw Error("itd_solve: step sizes must be > 0");
  }
  if (config.upper0.size() != problem.upper_dim ||
      config.lower0.size() != problem.lower_dim) {
    throw Error("itd_solve: initial point does not match problem dimensions");
  }
}

Vector finite_diff_vec(const std::function<Scalar(const Vector&)>& f,
                       const Vector& x, Scalar step) {
  Vector g(x.size());
  Vector probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    const Scalar saved = probe[i];
    probe[i] = saved + step;
    const Scalar up = f(probe);
    probe[i] = saved - step;
    const Scalar down = f(probe);
    probe[i] = saved;
    g[i] = (up - down) / (2 * step);
  }
  return g;
}

void check_one(const char* name, const Vector& analytic, const Vector& numeric,
               Scalar tol) {
  for (Index i = 0; i < analytic.size(); ++i) {
    const Scalar err = std::abs(analytic[i] - numeric[i]) /
                       std::max(Scalar(1), std::abs(numeric[i]));
    if (!(err <= tol)) {
      throw Error(std::string("bilevel gradient oracle ") + name +
                  " disagrees with finite differences at coordinate " +
                  std::to_string(i) + " (error " + std::to_string(err) + ")");
    }
  }
}

}  // namespace

void check_problem_gradients(const BilevelProblem& problem, std::uint64_t seed,
                             Scalar tol, int probes) {
  if (!problem.upper_fn || !problem.lower_fn) {
    throw Error("check_problem_gradients: missing objective");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<Scalar> normal(0, 1);
  const Scalar step = 1e-6;
  for (int p = 0; p < probes; ++p) {
    Vector xu(problem.upper_dim), xl(problem.lower_dim);
    for (Index i = 0; i < xu.size(); ++i) xu[i] = normal(rng);
    for (Index i = 0; i < xl.size(); ++i) xl[i] = normal(rng);
    if (problem.upper_grad_upper) {
      check_one("upper_grad_upper", problem.upper_grad_upper(xu, xl),
                finite_diff_vec([&](const Vector& v) { return problem.upper_fn(v, xl); },
                                xu, step),
                tol);
    }
    if (problem.upper_grad_lower) {
      check_one("upper_grad_lower", problem.upper_grad_lower(xu, xl),
                finite_diff_vec([&](const Vector& v) { return problem.upper_fn(xu, v); },
                                xl, step),
                tol);
    }
    if (problem.lower_grad_upper) {
      check_one("lower_grad_upper", problem.lower_grad_upper(xu, xl),
                finite_diff_vec([&](const Vector& v) { return problem.lower_fn(v, xl); },
                                xu, step),
                tol);
    }
    if (problem.lower_grad_lower) {
      check_one("lower_grad_lower", problem.lower_grad_lower(xu, xl),
                finite_diff_vec([&](const Vector& v) { return problem.lower_fn(xu, v); },
                                xl, step),
                tol);
    }
  }
}

BilevelProblem make_checked_problem(BilevelProblem problem, std::uint64_t seed,
                                    Scalar tol) {
  check_problem_gradients(problem, seed, tol);
  return problem;
}

ItdResult itd_solve(const BilevelProblem& problem, const ItdConfig& config) {
  require_config(problem, config);
  ItdResult result;
  result.upper = config.upper0;
  result.lower = config.lower0;
  result.trace.reserve(static_cast<std::size_t>(config.outer_iters));

  for (int k = 0; k < config.outer_iters; ++k) {
    // Inner loop, warm-started from the previous outer iteration.
    for (int t = 0; t < config.inner_iters; ++t) {
      result.lower -= config.inner_lr * problem.lower_grad_lower(result.upper, result.lower);
      if (problem.lower_projection) {
        result.lower = problem.lower_projection(std::move(result.lower));
      }
    }
    const Scalar upper_value = problem.upper_fn(result.upper, result.lower);
    const Scalar lower_value = problem.lower_fn(result.upper, result.lower);
    result.upper -= config.outer_lr * problem.upper_grad_upper(result.upper, result.lower);
    if (!result.upper.allFinite() || !result.lower.allFinite()) {
      throw DivergenceError("itd_solve: non-finite iterate at outer iteration " +
                            std::to_string(k));
    }
    result.trace.push_back({k, result.upper, result.lower, upper_value, lower_value});
  }
  return result;
}

namespace {

/// Pure evaluation context behind the federation oracles. Reports at a given
/// upper point are memoized; every oracle call rebuilds client state from the
/// packed vector, so nothing leaks between probes.
struct FederationOracle {
  Simulation base;
  std::vector<Index> head_offsets;
  Index shared_offset = 0;
  Index upper_dim = 0;

  mutable Vector cached_upper;
  mutable std::vector<GradReport> cached_reports;
  mutable std::vector<Vector> cached_new_heads;

  explicit FederationOracle(const Simulation& sim) : base(sim) {
    Index offset = 0;
    for (const ClientState& c : base.clients) {
      if (!c.initial_loss) {
        throw Error("fedgradnorm_as_bilevel: client " + std::to_string(c.client_id) +
                    " has no initial loss set");
      }
      if (c.head_optimizer != HeadOptimizer::kGradientDescent) {
        throw Error("fedgradnorm_as_bilevel: clients must use plain gradient-descent heads");
      }
      if (c.batch_size > 0 && c.batch_size < c.data.size()) {
        throw Error("fedgradnorm_as_bilevel: clients must use full batches");
      }
      head_offsets.push_back(offset);
      offset += c.head.size();
    }
    shared_offset = offset;
    upper_dim = offset + base.shared.size();
  }

  ClientState client_at(std::size_t i, const Vector& upper) const {
    ClientState state = base.clients[i];
    state.head.values = upper.segment(head_offsets[i], state.head.size());
    return state;
  }

  ParamVector shared_at(const Vector& upper) const {
    ParamVector shared = base.shared;
    shared.values = upper.segment(shared_offset, shared.size());
    return shared;
  }

  void refresh(const Vector& upper) const {
    if (cached_upper.size() == upper.size() &&
        (cached_upper.array() == upper.array()).all()) {
      return;
    }
    const ParamVector shared = shared_at(upper);
    cached_reports.clear();
    cached_new_heads.clear();
    for (std::size_t i = 0; i < base.clients.size(); ++i) {
      auto [next, report] =
          local_round(client_at(i, upper), shared, base.shared_spec,
                      base.protocol.head_steps, base.protocol.shared_steps,
                      base.protocol.model_lr);
      cached_reports.push_back(std::move(report));
      cached_new_heads.push_back(std::move(next.head.values));
    }
    cached_upper = upper;
  }

  Scalar client_loss(std::size_t i, const Vector& upper) const {
    const ClientState state = client_at(i, upper);
    const ParamVector shared = shared_at(upper);
    const Matrix repr = forward(base.shared_spec, shared, state.data.inputs);
    const Matrix pred = forward(state.head_spec, state.head, repr);
    return loss(state.task.kind, pred, state.data.labels);
  }
};

}  // namespace

Vector pack_upper(const Simulation& sim) {
  Index dim = sim.shared.size();
  for (const ClientState& c : sim.clients) dim += c.head.size();
  Vector upper(dim);
  Index offset = 0;
  for (const ClientState& c : sim.clients) {
    upper.segment(offset, c.head.size()) = c.head.values;
    offset += c.head.size();
  }
  upper.segment(offset, sim.shared.size()) = sim.shared.values;
  return upper;
}

BilevelProblem fedgradnorm_as_bilevel(const Simulation& sim) {
  auto oracle = std::make_shared<FederationOracle>(sim);
  const Index n = sim.num_clients();
  if (n < 2) throw Error("fedgradnorm_as_bilevel: need at least 2 clients");

  BilevelProblem problem;
  problem.upper_dim = oracle->upper_dim;
  problem.lower_dim = n;

  problem.upper_fn = [oracle, n](const Vector& xu, const Vector& xl) {
    Scalar total = 0;
    for (Index i = 0; i < n; ++i) {
      total += xl[i] * oracle->client_loss(static_cast<std::size_t>(i), xu);
    }
    return total / Scalar(n);
  };

  problem.upper_grad_lower = [oracle, n](const Vector& xu, const Vector&) {
    Vector g(n);
    for (Index i = 0; i < n; ++i) {
      g[i] = oracle->client_loss(static_cast<std::size_t>(i), xu) / Scalar(n);
    }
    return g;
  };

  // The protocol's own update direction: the outer step then moves each head
  // by exactly one local round and the shared block by the aggregated step.
  problem.upper_grad_upper = [oracle](const Vector& xu, const Vector& xl) {
    oracle->refresh(xu);
    const Scalar lr = oracle->base.protocol.model_lr;
    Vector g(xu.size());
    for (std::size_t i = 0; i < oracle->base.clients.size(); ++i) {
      const Index offset = oracle->head_offsets[i];
      const Index size = oracle->cached_new_heads[i].size();
      g.segment(offset, size) =
          (xu.segment(offset, size) - oracle->cached_new_heads[i]) / lr;
    }
    g.segment(oracle->shared_offset, oracle->base.shared.size()) =
        weighted_mean_gradient(oracle->cached_reports, xl);
    return g;
  };

  const Scalar exponent = sim.protocol.rate_exponent;
  const BalanceForm form = sim.protocol.form;

  problem.lower_fn = [oracle, exponent, form](const Vector& xu, const Vector& xl) {
    oracle->refresh(xu);
    const GradNormTargets targets =
        compute_targets(oracle->cached_reports, xl, exponent);
    return balance_loss(oracle->cached_reports, xl, targets, form);
  };

  // Targets are recomputed at the current weights, then held constant for the
  // differentiation, mirroring the server's weight step.
  problem.lower_grad_lower = [oracle, exponent, form](const Vector& xu,
                                                      const Vector& xl) {
    oracle->refresh(xu);
    const GradNormTargets targets =
        compute_targets(oracle->cached_reports, xl, exponent);
    return balance_loss_grad(oracle->cached_reports, xl, targets, form);
  };

  problem.lower_projection = [](Vector p) { return renormalize_weights(std::move(p)); };
  return problem;
}

}  // namespace fgn
