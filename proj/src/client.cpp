#include "fgn/client.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <random>

#include "fgn/seeding.hpp"

namespace fgn {

namespace {

void require_valid(const ClientState& state, int head_steps, int shared_steps,
                   Scalar model_lr) {
  state.task.validate();
  if (state.data.inputs.rows() != state.data.labels.rows()) {
    throw Error("client " + std::to_string(state.client_id) +
                ": dataset row counts differ");
  }
  if (head_steps < 1 || shared_steps < 1) {
    throw Error("client " + std::to_string(state.client_id) +
                ": head_steps and shared_steps must be >= 1");
  }
  if (model_lr < 0) {
    throw Error("client " + std::to_string(state.client_id) +
                ": learning rate must be >= 0");
  }
}

void apply_head_update(ClientState& state, const Gradient& grad, Scalar lr) {
  if (state.head_optimizer == HeadOptimizer::kGradientDescent) {
    state.head.values -= lr * grad.values;
    return;
  }
  if (!state.adam_state) {
    state.adam_state = AdamState{Vector::Zero(state.head.size()),
                                 Vector::Zero(state.head.size()), 0};
  }
  AdamState& s = *state.adam_state;
  const AdamParams& p = state.adam;
  ++s.step;
  s.m = p.beta1 * s.m + (1 - p.beta1) * grad.values;
  s.v = p.beta2 * s.v + (1 - p.beta2) * grad.values.cwiseProduct(grad.values);
  const Scalar m_corr = 1 - std::pow(p.beta1, Scalar(s.step));
  const Scalar v_corr = 1 - std::pow(p.beta2, Scalar(s.step));
  state.head.values.array() -=
      lr * (s.m.array() / m_corr) /
      ((s.v.array() / v_corr).sqrt() + p.eps);
}

// Minibatch selection; full batch when batch_size is 0 or covers the data.
void select_batch(const ClientState& state, Matrix& inputs, Matrix& labels) {
  const Index n = state.data.size();
  if (state.batch_size <= 0 || state.batch_size >= n) {
    inputs = state.data.inputs;
    labels = state.data.labels;
    return;
  }
  std::mt19937_64 rng(mix_seed(state.rng_seed,
                               static_cast<std::uint64_t>(state.rounds_done)));
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index(0));
  std::shuffle(order.begin(), order.end(), rng);
  inputs.resize(state.batch_size, state.data.inputs.cols());
  labels.resize(state.batch_size, state.data.labels.cols());
  for (Index r = 0; r < state.batch_size; ++r) {
    inputs.row(r) = state.data.inputs.row(order[static_cast<std::size_t>(r)]);
    labels.row(r) = state.data.labels.row(order[static_cast<std::size_t>(r)]);
  }
}

}  // namespace

ClientState set_initial_loss(ClientState state, const ParamVector& shared,
                             const MlpSpec& shared_spec) {
  if (state.initial_loss) {
    throw Error("client " + std::to_string(state.client_id) +
                ": initial loss already set");
  }
  const Matrix repr = forward(shared_spec, shared, state.data.inputs);
  const Matrix pred = forward(state.head_spec, state.head, repr);
  Scalar value = loss(state.task.kind, pred, state.data.labels);
  if (!std::isfinite(value)) {
    throw DivergenceError("client " + std::to_string(state.client_id) +
                          ": non-finite initial loss");
  }
  if (value < kInitialLossFloor) {
    std::cerr << "warning: client " << state.client_id << " initial loss "
              << value << " clamped to " << kInitialLossFloor << "\n";
    value = kInitialLossFloor;
    state.initial_loss_clamped = true;
  }
  state.initial_loss = value;
  return state;
}

std::pair<ClientState, GradReport> local_round(ClientState state,
                                               const ParamVector& shared,
                                               const MlpSpec& shared_spec,
                                               int head_steps, int shared_steps,
                                               Scalar model_lr) {
  require_valid(state, head_steps, shared_steps, model_lr);
  if (!state.initial_loss) {
    throw Error("client " + std::to_string(state.client_id) +
                ": initial loss not set before the first round");
  }

  Matrix inputs, labels;
  select_batch(state, inputs, labels);
  const TaskKind kind = state.task.kind;
  const Scalar head_lr = state.head_lr > 0 ? state.head_lr : model_lr;

  // Head phase: the shared network is frozen at the received parameters, so
  // its output is computed once and reused for every head step.
  const Matrix repr = forward(shared_spec, shared, inputs);
  for (int j = 0; j < head_steps; ++j) {
    const Matrix pred = forward(state.head_spec, state.head, repr);
    const Matrix lg = loss_grad(kind, pred, labels);
    const Gradient grad = backward(state.head_spec, state.head, repr, lg);
    apply_head_update(state, grad, head_lr);
    if (!state.head.values.allFinite()) {
      throw DivergenceError("client " + std::to_string(state.client_id) +
                            ": non-finite head parameters during local round");
    }
  }

  // Shared phase: the head is frozen; a local copy of the shared parameters
  // takes plain gradient steps. Each step's gradient is taken before the
  // step and the loss is recorded after it; both are averaged.
  ParamVector local = shared;
  Gradient grad_sum = zeros_like(shared);
  Scalar loss_sum = 0;
  Matrix cur_repr = repr;
  for (int j = 0; j < shared_steps; ++j) {
    const Matrix pred = forward(state.head_spec, state.head, cur_repr);
    const Matrix lg = loss_grad(kind, pred, labels);
    Matrix repr_grad;
    backward(state.head_spec, state.head, cur_repr, lg, &repr_grad);
    const Gradient grad = backward(shared_spec, local, inputs, repr_grad);
    grad_sum.values += grad.values;
    local.values -= model_lr * grad.values;
    if (!local.values.allFinite()) {
      throw DivergenceError("client " + std::to_string(state.client_id) +
                            ": non-finite shared parameters during local round");
    }
    cur_repr = forward(shared_spec, local, inputs);
    loss_sum += loss(kind, forward(state.head_spec, state.head, cur_repr), labels);
  }

  GradReport report;
  report.client_id = state.client_id;
  report.avg_grad = std::move(grad_sum);
  report.avg_grad.values /= Scalar(shared_steps);
  report.raw_loss = loss_sum / Scalar(shared_steps);
  if (!std::isfinite(report.raw_loss) || !report.avg_grad.values.allFinite()) {
    throw DivergenceError("client " + std::to_string(state.client_id) +
                          ": non-finite loss or gradient during local round");
  }
  report.tail_norm = restricted_norm(report.avg_grad);
  Scalar numerator = report.raw_loss;
  if (numerator < kTinyLossFloor) {
    numerator = kTinyLossFloor;
    report.tiny_loss_clamped = true;
  }
  report.inverse_rate = numerator / *state.initial_loss;

  ++state.rounds_done;
  return {std::move(state), std::move(report)};
}

}  // namespace fgn
