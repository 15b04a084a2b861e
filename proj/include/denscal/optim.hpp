// SPDX-License-Identifier: Apache-2.0
//
// Deterministic optimizers: dense BFGS with a strong-Wolfe line search,
// Adam with decoupled weight decay, and a central-difference gradient.
#pragma once

#include <functional>
#include <span>
#include <string_view>
#include <vector>

namespace denscal {

struct ObjectiveEval {
  double value = 0.0;
  std::vector<double> gradient;
};

using Objective = std::function<ObjectiveEval(std::span<const double>)>;
using ScalarFunction = std::function<double(std::span<const double>)>;

/// One accepted BFGS step, reported to BfgsConfig::observer.
struct LineSearchStep {
  std::span<const double> x;
  std::span<const double> direction;
  double value = 0.0;
  double slope = 0.0;  // directional derivative at alpha = 0
  double alpha = 0.0;
  double new_value = 0.0;
  double new_slope = 0.0;  // directional derivative at the accepted alpha
};

struct BfgsConfig {
  double grad_tol = 1e-6;  // on the l2 norm
  int max_iter = 500;
  double wolfe_c1 = 1e-4;
  double wolfe_c2 = 0.9;
  int max_line_search_steps = 40;
  std::function<void(const LineSearchStep&)> observer;

  void validate() const;
};

enum class OptimStatus { Converged, MaxIterations, LineSearchFailed };
std::string_view to_string(OptimStatus s);

struct OptimResult {
  std::vector<double> x;
  double value = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  OptimStatus status = OptimStatus::MaxIterations;
};

/// Minimizes f from x0. The inverse Hessian starts at I / ||g0|| (clamped to
/// [1e-3, 1e3]) and receives the standard BFGS update after every accepted
/// step. Non-finite evaluations during the run end it with LineSearchFailed
/// and the last good iterate; a non-finite start throws NumericError.
OptimResult bfgs_minimize(const Objective& f, std::vector<double> x0, const BfgsConfig& cfg = {});

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  /// true: params *= (1 - lr*wd) before the Adam delta.
  /// false: wd*params is added to the gradient (L2 penalty).
  bool decoupled_weight_decay = true;

  void validate() const;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
};

/// Applies one Adam update in place. step_index counts from 1 and drives the
/// bias correction. Throws std::invalid_argument on shape mismatch.
void adam_step(AdamState& state, std::span<double> params, std::span<const double> gradient,
               const AdamConfig& cfg, long step_index);

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h.
std::vector<double> finite_diff_gradient(const ScalarFunction& f, std::span<const double> x, double h);

double l2_norm(std::span<const double> v);

}  // namespace denscal
