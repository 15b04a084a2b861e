// SPDX-License-Identifier: Apache-2.0
#include "denscal/optim.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>

#include "denscal/error.hpp"

namespace denscal {

std::string_view to_string(OptimStatus s) {
  switch (s) {
    case OptimStatus::Converged: return "Converged";
    case OptimStatus::MaxIterations: return "MaxIterations";
    case OptimStatus::LineSearchFailed: return "LineSearchFailed";
  }
  return "?";
}

double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

void BfgsConfig::validate() const {
  if (!(0.0 < wolfe_c1 && wolfe_c1 < wolfe_c2 && wolfe_c2 < 1.0))
    throw std::invalid_argument("BFGS requires 0 < c1 < c2 < 1");
  if (!(grad_tol > 0.0)) throw std::invalid_argument("BFGS grad_tol must be positive");
  if (max_iter < 0 || max_line_search_steps < 1) throw std::invalid_argument("BFGS iteration limits invalid");
}

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

bool finite_eval(const ObjectiveEval& e) {
  return std::isfinite(e.value) &&
         std::all_of(e.gradient.begin(), e.gradient.end(), [](double g) { return std::isfinite(g); });
}

struct Trial {
  double alpha = 0.0;
  double value = 0.0;
  double slope = 0.0;
  std::vector<double> x;
  std::vector<double> gradient;
  bool finite = true;
};

// Minimizer of the cubic through (a1, f1, d1) and (a2, f2, d2), or NaN.
double cubic_minimizer(double a1, double f1, double d1, double a2, double f2, double d2) {
  const double e1 = d1 + d2 - 3.0 * (f1 - f2) / (a1 - a2);
  const double rad = e1 * e1 - d1 * d2;
  if (!(rad >= 0.0)) return std::nan("");
  const double e2 = std::copysign(std::sqrt(rad), a2 - a1);
  const double denom = d2 - d1 + 2.0 * e2;
  if (denom == 0.0) return std::nan("");
  return a2 - (a2 - a1) * (d2 + e2 - e1) / denom;
}

class LineSearch {
 public:
  LineSearch(const Objective& f, std::span<const double> x, double f0, double d0, std::span<const double> p,
             const BfgsConfig& cfg)
      : f_(f), x_(x), f0_(f0), d0_(d0), p_(p), cfg_(cfg) {}

  std::optional<Trial> run() {
    Trial prev{0.0, f0_, d0_, {}, {}, true};
    double alpha = 1.0;
    for (int i = 0; budget_left(); ++i) {
      Trial cur = evaluate(alpha);
      if (!cur.finite) return zoom(prev, cur);  // overshot into a non-finite region
      if (cur.value > f0_ + cfg_.wolfe_c1 * cur.alpha * d0_ || (i > 0 && cur.value >= prev.value))
        return zoom(prev, cur);
      if (std::abs(cur.slope) <= -cfg_.wolfe_c2 * d0_) return cur;
      if (cur.slope >= 0.0) return zoom(cur, prev);
      prev = std::move(cur);
      alpha *= 2.0;
    }
    return std::nullopt;
  }

 private:
  bool budget_left() const { return evals_ < cfg_.max_line_search_steps; }

  Trial evaluate(double alpha) {
    ++evals_;
    Trial t;
    t.alpha = alpha;
    t.x.resize(x_.size());
    for (std::size_t i = 0; i < x_.size(); ++i) t.x[i] = x_[i] + alpha * p_[i];
    ObjectiveEval e = f_(t.x);
    t.finite = finite_eval(e) && e.gradient.size() == x_.size();
    t.value = e.value;
    t.gradient = std::move(e.gradient);
    t.slope = t.finite ? dot(t.gradient, p_) : std::nan("");
    return t;
  }

  std::optional<Trial> zoom(Trial lo, Trial hi) {
    while (budget_left()) {
      const double a_min = std::min(lo.alpha, hi.alpha);
      const double a_max = std::max(lo.alpha, hi.alpha);
      const double width = a_max - a_min;
      if (width <= 1e-16 * std::max(1.0, a_max)) return std::nullopt;
      double alpha = hi.finite ? cubic_minimizer(lo.alpha, lo.value, lo.slope, hi.alpha, hi.value, hi.slope)
                               : std::nan("");
      if (!std::isfinite(alpha) || alpha < a_min + 0.1 * width || alpha > a_max - 0.1 * width)
        alpha = 0.5 * (lo.alpha + hi.alpha);
      Trial cur = evaluate(alpha);
      if (!cur.finite || cur.value > f0_ + cfg_.wolfe_c1 * cur.alpha * d0_ || cur.value >= lo.value) {
        hi = std::move(cur);
        continue;
      }
      if (std::abs(cur.slope) <= -cfg_.wolfe_c2 * d0_) return cur;
      if (cur.slope * (hi.alpha - lo.alpha) >= 0.0) hi = std::move(lo);
      lo = std::move(cur);
    }
    return std::nullopt;
  }

  const Objective& f_;
  std::span<const double> x_;
  double f0_;
  double d0_;
  std::span<const double> p_;
  const BfgsConfig& cfg_;
  int evals_ = 0;
};

void reset_inverse_hessian(std::vector<double>& H, std::size_t n, double gnorm) {
  const double scale = std::clamp(gnorm > 0.0 ? 1.0 / gnorm : 1.0, 1e-3, 1e3);
  std::fill(H.begin(), H.end(), 0.0);
  for (std::size_t i = 0; i < n; ++i) H[i * n + i] = scale;
}

}  // namespace

OptimResult bfgs_minimize(const Objective& f, std::vector<double> x0, const BfgsConfig& cfg) {
  cfg.validate();
  const std::size_t n = x0.size();
  ObjectiveEval cur = f(x0);
  if (!finite_eval(cur) || cur.gradient.size() != n)
    throw NumericError("BFGS: objective is not finite at the starting point");

  OptimResult res;
  res.x = std::move(x0);
  res.value = cur.value;
  res.grad_norm = l2_norm(cur.gradient);

  std::vector<double> H(n * n);
  reset_inverse_hessian(H, n, res.grad_norm);
  std::vector<double> p(n), Hy(n), s(n), y(n);

  for (res.iterations = 0;; ++res.iterations) {
    if (res.grad_norm <= cfg.grad_tol) {
      res.status = OptimStatus::Converged;
      return res;
    }
    if (res.iterations >= cfg.max_iter) {
      res.status = OptimStatus::MaxIterations;
      return res;
    }

    for (std::size_t i = 0; i < n; ++i) p[i] = -dot(std::span(H).subspan(i * n, n), cur.gradient);
    double slope = dot(p, cur.gradient);
    if (!(slope < 0.0)) {
      reset_inverse_hessian(H, n, res.grad_norm);
      for (std::size_t i = 0; i < n; ++i) p[i] = -H[i * n + i] * cur.gradient[i];
      slope = dot(p, cur.gradient);
    }

    LineSearch ls(f, res.x, res.value, slope, p, cfg);
    std::optional<Trial> step = ls.run();
    if (!step) {
      res.status = OptimStatus::LineSearchFailed;
      return res;
    }
    if (cfg.observer)
      cfg.observer(LineSearchStep{res.x, p, res.value, slope, step->alpha, step->value, step->slope});

    for (std::size_t i = 0; i < n; ++i) {
      s[i] = step->x[i] - res.x[i];
      y[i] = step->gradient[i] - cur.gradient[i];
    }
    const double ys = dot(y, s);
    if (ys > 1e-12 * l2_norm(y) * l2_norm(s)) {
      const double rho = 1.0 / ys;
      for (std::size_t i = 0; i < n; ++i) Hy[i] = dot(std::span(H).subspan(i * n, n), y);
      const double yHy = dot(y, Hy);
      const double ss_coef = rho * rho * yHy + rho;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          H[i * n + j] += -rho * (Hy[i] * s[j] + s[i] * Hy[j]) + ss_coef * s[i] * s[j];
    }

    res.x = std::move(step->x);
    res.value = step->value;
    cur.value = step->value;
    cur.gradient = std::move(step->gradient);
    res.grad_norm = l2_norm(cur.gradient);
  }
}

void AdamConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("Adam learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
    throw std::invalid_argument("Adam betas must lie in [0, 1)");
  if (!(epsilon > 0.0) || !(weight_decay >= 0.0)) throw std::invalid_argument("Adam epsilon/weight_decay invalid");
}

void adam_step(AdamState& state, std::span<double> params, std::span<const double> gradient, const AdamConfig& cfg,
               long step_index) {
  const std::size_t n = params.size();
  if (gradient.size() != n) throw std::invalid_argument("adam_step: gradient/params shape mismatch");
  if (step_index < 1) throw std::invalid_argument("adam_step: step_index starts at 1");
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(n, 0.0);
    state.v.assign(n, 0.0);
  }
  if (state.m.size() != n || state.v.size() != n) throw std::invalid_argument("adam_step: state shape mismatch");

  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_index));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_index));
  const double decay = cfg.decoupled_weight_decay ? 1.0 - cfg.learning_rate * cfg.weight_decay : 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    double g = gradient[i];
    if (!cfg.decoupled_weight_decay) g += cfg.weight_decay * params[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] = params[i] * decay - cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
  }
}

std::vector<double> finite_diff_gradient(const ScalarFunction& f, std::span<const double> x, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_gradient: h must be positive");
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down)) throw NumericError("finite_diff_gradient: non-finite evaluation");
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace denscal
