#include "fgn/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <thread>

namespace fgn {

int resolve_thread_count(int requested, Index num_clients) {
  int threads = requested;
  if (const char* env = std::getenv("FEDGRADNORM_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) threads = threads > 0 ? std::min(threads, cap) : cap;
  }
  if (threads <= 0) {
    threads = static_cast<int>(std::thread::hardware_concurrency());
    if (threads <= 0) threads = 1;
  }
  return std::max(1, std::min<int>(threads, static_cast<int>(num_clients)));
}

std::vector<GradReport> run_clients(Simulation& sim) {
  const Index n = sim.num_clients();
  if (n == 0) throw Error("run_clients: simulation has no clients");
  std::vector<GradReport> reports(static_cast<std::size_t>(n));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));

  auto run_one = [&](Index i) {
    const auto idx = static_cast<std::size_t>(i);
    try {
      auto [next, report] =
          local_round(std::move(sim.clients[idx]), sim.shared, sim.shared_spec,
                      sim.protocol.head_steps, sim.protocol.shared_steps,
                      sim.protocol.model_lr);
      sim.clients[idx] = std::move(next);
      reports[idx] = std::move(report);
    } catch (...) {
      errors[idx] = std::current_exception();
    }
  };

  const int threads = resolve_thread_count(sim.threads, n);
  if (threads <= 1) {
    for (Index i = 0; i < n; ++i) run_one(i);
  } else {
    std::atomic<Index> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (Index i = next.fetch_add(1); i < n; i = next.fetch_add(1)) run_one(i);
      });
    }
    for (std::thread& t : pool) t.join();
  }

  // Rethrow the lowest-index failure so the error surface is deterministic.
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return reports;
}

RoundMetrics run_simulation_round(Simulation& sim) {
  std::vector<GradReport> reports = run_clients(sim);
  RoundResult result = run_round(sim.protocol.round_options(), sim.shared,
                                 std::move(reports), sim.weights);
  sim.shared = std::move(result.shared);
  sim.weights = std::move(result.weights);
  ++sim.rounds_done;
  result.metrics.round = sim.rounds_done;
  return result.metrics;
}

}  // namespace fgn
