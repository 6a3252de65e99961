#include "fgn/server.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

namespace fgn {

namespace {

constexpr Scalar kSumTolerance = 1e-9;

void require_reports_valid(const std::vector<GradReport>& reports,
                           const Vector& weights) {
  if (reports.size() < 2) {
    throw Error("server: need at least 2 reports, got " +
                std::to_string(reports.size()));
  }
  if (weights.size() != static_cast<Index>(reports.size())) {
    throw Error("server: " + std::to_string(weights.size()) + " weights for " +
                std::to_string(reports.size()) + " reports");
  }
  for (const GradReport& r : reports) {
    if (!std::isfinite(r.tail_norm) || !std::isfinite(r.inverse_rate) ||
        !std::isfinite(r.raw_loss) || !r.avg_grad.values.allFinite()) {
      throw Error("server: non-finite field in report from client " +
                  std::to_string(r.client_id));
    }
  }
}

void sort_by_client(std::vector<GradReport>& reports) {
  std::sort(reports.begin(), reports.end(),
            [](const GradReport& a, const GradReport& b) {
              return a.client_id < b.client_id;
            });
  for (std::size_t i = 0; i < reports.size(); ++i) {
    if (reports[i].client_id != static_cast<int>(i)) {
      throw Error("server: expected reports from clients 0.." +
                  std::to_string(reports.size() - 1));
    }
  }
}

}  // namespace

LossWeights LossWeights::uniform(Index n) {
  if (n < 1) throw Error("LossWeights: need at least 1 task");
  return LossWeights(Vector::Ones(n));
}

LossWeights LossWeights::from_values(Vector p) {
  if (p.size() < 1) throw Error("LossWeights: need at least 1 task");
  if (!p.allFinite()) throw Error("LossWeights: non-finite weight");
  if (p.minCoeff() < kWeightFloor) {
    throw Error("LossWeights: weight " + std::to_string(p.minCoeff()) +
                " below floor " + std::to_string(kWeightFloor));
  }
  if (std::abs(p.sum() - Scalar(p.size())) > kSumTolerance) {
    throw Error("LossWeights: weights sum to " + std::to_string(p.sum()) +
                ", expected " + std::to_string(p.size()));
  }
  return LossWeights(std::move(p));
}

WeightingStrategy strategy_from_string(std::string_view name) {
  if (name == "fedgradnorm") return WeightingStrategy::kFedGradNorm;
  if (name == "equal") return WeightingStrategy::kEqual;
  throw Error("unknown strategy: " + std::string(name));
}

std::string_view to_string(WeightingStrategy s) {
  return s == WeightingStrategy::kFedGradNorm ? "fedgradnorm" : "equal";
}

BalanceForm balance_form_from_string(std::string_view name) {
  if (name == "abs") return BalanceForm::kAbsolute;
  if (name == "squared") return BalanceForm::kSquared;
  throw Error("unknown balance form: " + std::string(name));
}

std::string_view to_string(BalanceForm f) {
  return f == BalanceForm::kAbsolute ? "abs" : "squared";
}

GradNormTargets compute_targets(const std::vector<GradReport>& reports,
                                const Vector& weights, Scalar rate_exponent) {
  require_reports_valid(reports, weights);
  if (rate_exponent < 0) {
    throw Error("compute_targets: rate exponent must be >= 0");
  }
  const Index n = weights.size();
  GradNormTargets out;
  out.rel_rates.resize(n);
  out.targets.resize(n);

  Scalar norm_sum = 0;
  Scalar rate_sum = 0;
  for (Index i = 0; i < n; ++i) {
    norm_sum += weights[i] * reports[static_cast<std::size_t>(i)].tail_norm;
    rate_sum += reports[static_cast<std::size_t>(i)].inverse_rate;
  }
  out.mean_norm = norm_sum / Scalar(n);
  const Scalar mean_rate = rate_sum / Scalar(n);
  for (Index i = 0; i < n; ++i) {
    out.rel_rates[i] = reports[static_cast<std::size_t>(i)].inverse_rate / mean_rate;
    out.targets[i] = out.mean_norm * std::pow(out.rel_rates[i], rate_exponent);
  }
  return out;
}

GradNormTargets compute_targets(const std::vector<GradReport>& reports,
                                const LossWeights& weights, Scalar rate_exponent) {
  return compute_targets(reports, weights.values(), rate_exponent);
}

Scalar balance_loss(const std::vector<GradReport>& reports, const Vector& weights,
                    const GradNormTargets& targets, BalanceForm form) {
  require_reports_valid(reports, weights);
  Scalar total = 0;
  for (Index i = 0; i < weights.size(); ++i) {
    const Scalar deviation =
        weights[i] * reports[static_cast<std::size_t>(i)].tail_norm - targets.targets[i];
    total += form == BalanceForm::kAbsolute ? std::abs(deviation)
                                            : deviation * deviation;
  }
  return total;
}

Scalar balance_loss(const std::vector<GradReport>& reports,
                    const LossWeights& weights, const GradNormTargets& targets,
                    BalanceForm form) {
  return balance_loss(reports, weights.values(), targets, form);
}

Vector balance_loss_grad(const std::vector<GradReport>& reports,
                         const Vector& weights, const GradNormTargets& targets,
                         BalanceForm form) {
  require_reports_valid(reports, weights);
  Vector grad(weights.size());
  for (Index i = 0; i < weights.size(); ++i) {
    const Scalar norm = reports[static_cast<std::size_t>(i)].tail_norm;
    const Scalar deviation = weights[i] * norm - targets.targets[i];
    if (form == BalanceForm::kAbsolute) {
      const Scalar sign = deviation > 0 ? Scalar(1) : (deviation < 0 ? Scalar(-1) : Scalar(0));
      grad[i] = norm * sign;
    } else {
      grad[i] = 2 * deviation * norm;
    }
  }
  return grad;
}

Vector balance_loss_grad(const std::vector<GradReport>& reports,
                         const LossWeights& weights, const GradNormTargets& targets,
                         BalanceForm form) {
  return balance_loss_grad(reports, weights.values(), targets, form);
}

Vector renormalize_weights(Vector p) {
  const Index n = p.size();
  if (n < 1) throw Error("renormalize_weights: empty weight vector");
  if (!p.allFinite()) throw Error("renormalize_weights: non-finite weight");

  bool all_clamped = true;
  for (Index i = 0; i < n; ++i) {
    if (p[i] > kWeightFloor) all_clamped = false;
  }
  if (all_clamped) {
    std::cerr << "warning: all loss weights at or below the floor; "
                 "resetting to uniform\n";
    return Vector::Ones(n);
  }

  // Entries pinned at the floor keep exactly kWeightFloor; the rest are
  // rescaled to make the sum n, re-pinning anything the rescale pushed under
  // the floor. The per-entry (p_i * mass) / sum form keeps an all-equal
  // vector exactly at ones; a precomputed scale factor would not.
  for (Index i = 0; i < n; ++i) p[i] = std::max(p[i], kWeightFloor);
  std::vector<bool> pinned(static_cast<std::size_t>(n), false);
  for (Index pass = 0; pass < n; ++pass) {
    Scalar pinned_mass = 0;
    Scalar free_sum = 0;
    Index free_count = 0;
    for (Index i = 0; i < n; ++i) {
      if (pinned[static_cast<std::size_t>(i)]) pinned_mass += kWeightFloor;
      else {
        free_sum += p[i];
        ++free_count;
      }
    }
    if (free_count == 0) break;
    const Scalar mass = Scalar(n) - pinned_mass;
    bool repinned = false;
    for (Index i = 0; i < n; ++i) {
      const auto idx = static_cast<std::size_t>(i);
      if (pinned[idx]) {
        p[i] = kWeightFloor;
        continue;
      }
      p[i] = (p[i] * mass) / free_sum;
      if (p[i] < kWeightFloor) {
        pinned[idx] = true;
        p[i] = kWeightFloor;
        repinned = true;
      }
    }
    if (!repinned) return p;
  }
  throw Error("renormalize_weights: failed to satisfy the floor after rescaling");
}

LossWeights update_weights(const LossWeights& weights, const Vector& grad,
                           Scalar weight_lr) {
  if (!(weight_lr > 0)) throw Error("update_weights: weight_lr must be > 0");
  if (grad.size() != weights.size()) {
    throw Error("update_weights: gradient size " + std::to_string(grad.size()) +
                " does not match " + std::to_string(weights.size()) + " weights");
  }
  if (!grad.allFinite()) throw Error("update_weights: non-finite gradient");
  Vector stepped = weights.values() - weight_lr * grad;
  if ((stepped.array() == weights.values().array()).all()) {
    return weights;  // nothing moved; keep the exact same weights
  }
  return LossWeights::from_values(renormalize_weights(std::move(stepped)));
}

Vector weighted_mean_gradient(const std::vector<GradReport>& reports,
                              const Vector& weights) {
  const Index n = weights.size();
  Vector acc = Vector::Zero(reports.front().avg_grad.values.size());
  for (Index i = 0; i < n; ++i) {
    acc += weights[i] * reports[static_cast<std::size_t>(i)].avg_grad.values;
  }
  return acc / Scalar(n);
}

ParamVector aggregate_and_step(const ParamVector& shared,
                               const std::vector<GradReport>& reports,
                               const LossWeights& weights, Scalar model_lr) {
  if (reports.empty()) throw Error("aggregate_and_step: no reports");
  if (weights.size() != static_cast<Index>(reports.size())) {
    throw Error("aggregate_and_step: " + std::to_string(weights.size()) +
                " weights for " + std::to_string(reports.size()) + " reports");
  }
  for (const GradReport& r : reports) {
    if (!r.avg_grad.layout || !shared.layout || !(*r.avg_grad.layout == *shared.layout)) {
      throw Error("aggregate_and_step: gradient layout from client " +
                  std::to_string(r.client_id) +
                  " does not match the shared parameters");
    }
  }
  const Vector g = weighted_mean_gradient(reports, weights.values());
  ParamVector next = shared;
  next.values = shared.values - model_lr * g;
  return next;
}

RoundResult run_round(const RoundOptions& options, const ParamVector& shared,
                      std::vector<GradReport> reports, const LossWeights& weights) {
  sort_by_client(reports);
  const Index n = weights.size();

  LossWeights updated = weights;
  GradNormTargets targets = compute_targets(reports, updated, options.rate_exponent);
  if (options.strategy == WeightingStrategy::kFedGradNorm) {
    for (int step = 0; step < options.weight_steps; ++step) {
      if (step > 0) {
        targets = compute_targets(reports, updated, options.rate_exponent);
      }
      const Vector grad = balance_loss_grad(reports, updated, targets, options.form);
      updated = update_weights(updated, grad, options.weight_lr);
    }
  }

  RoundResult result{aggregate_and_step(shared, reports, updated, options.model_lr),
                     updated, RoundMetrics{}};

  RoundMetrics& m = result.metrics;
  m.raw_loss.resize(n);
  m.inverse_rate.resize(n);
  m.rel_rate = targets.rel_rates;
  m.weight = updated.values();
  m.actual_norm.resize(n);
  m.target_norm = targets.targets;
  Scalar objective = 0;
  for (Index i = 0; i < n; ++i) {
    const GradReport& r = reports[static_cast<std::size_t>(i)];
    m.raw_loss[i] = r.raw_loss;
    m.inverse_rate[i] = r.inverse_rate;
    m.actual_norm[i] = updated[i] * r.tail_norm;
    objective += updated[i] * r.raw_loss;
  }
  m.objective = objective / Scalar(n);
  m.balance = balance_loss(reports, updated, targets, options.form);
  return result;
}

}  // namespace fgn
