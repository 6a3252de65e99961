#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "fgn/simulation.hpp"
#include "fgn/types.hpp"

namespace fgn {

/// A two-level problem: minimize upper_fn over the upper variable subject to
/// the lower variable minimizing lower_fn. Oracles give gradients of each
/// function in each argument; `lower_projection`, when set, is applied after
/// every inner gradient step (constrained lower problems).
struct BilevelProblem {
  Index upper_dim = 0;
  Index lower_dim = 0;
  std::function<Scalar(const Vector&, const Vector&)> upper_fn;
  std::function<Scalar(const Vector&, const Vector&)> lower_fn;
  using GradFn = std::function<Vector(const Vector&, const Vector&)>;
  GradFn upper_grad_upper;  // d upper_fn / d upper
  GradFn upper_grad_lower;  // d upper_fn / d lower
  GradFn lower_grad_upper;  // d lower_fn / d upper
  GradFn lower_grad_lower;  // d lower_fn / d lower
  std::function<Vector(Vector)> lower_projection;
};

/// Probes the provided gradient oracles against central differences of the
/// functions at random points; throws when any disagrees beyond `tol`.
void check_problem_gradients(const BilevelProblem& problem, std::uint64_t seed,
                             Scalar tol = 1e-4, int probes = 3);

/// Constructs a problem whose oracles have passed check_problem_gradients.
BilevelProblem make_checked_problem(BilevelProblem problem,
                                    std::uint64_t seed = 0, Scalar tol = 1e-4);

struct ItdConfig {
  int outer_iters = 1;
  int inner_iters = 1;
  Scalar inner_lr = 0.1;
  Scalar outer_lr = 0.1;
  Vector upper0;
  Vector lower0;
};

struct ItdIterate {
  int iter = 0;
  Vector upper;        // after the outer update
  Vector lower;        // after the inner loop (unchanged by the outer update)
  Scalar upper_value;  // upper_fn before the outer update
  Scalar lower_value;  // lower_fn at the inner loop's final point
};

struct ItdResult {
  Vector upper;
  Vector lower;
  std::vector<ItdIterate> trace;
};

/// Iterative differentiation: per outer iteration, `inner_iters` gradient
/// steps on the lower problem warm-started from the previous outer iteration,
/// then one outer step along the direct partial d upper_fn / d upper at the
/// reached lower point. No second-order correction is applied.
ItdResult itd_solve(const BilevelProblem& problem, const ItdConfig& config);

/// Views a federation as a bilevel problem: the upper variable stacks every
/// client head and then the shared parameters, the lower variable is the loss
/// weight vector, the upper objective is the weighted mean of client losses
/// and the lower objective the gradient-norm balance loss.
///
/// The upper gradient oracle returns the direction the protocol itself
/// applies (per-head displacement over the learning rate, and the weighted
/// mean shared gradient), so itd_solve with inner_iters = 1 reproduces the
/// per-round weight dynamics. The lower oracle differentiates with frozen
/// targets and the lower projection is the weight renormalization, both as in
/// the server round. The simulation must have initial losses set, plain
/// gradient-descent heads, and full batches.
BilevelProblem fedgradnorm_as_bilevel(const Simulation& sim);

/// Packs (heads..., shared) into one upper vector for fedgradnorm_as_bilevel.
Vector pack_upper(const Simulation& sim);

}  // namespace fgn
