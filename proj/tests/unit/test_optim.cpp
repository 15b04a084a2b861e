// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <random>

#include "denscal/adapt.hpp"
#include "denscal/error.hpp"
#include "denscal/optim.hpp"
#include "support.hpp"

using namespace denscal;

TEST_CASE("BFGS on a convex quadratic") {
  const std::vector<double> target{1, 2, 3};
  Objective f = [&](std::span<const double> x) {
    ObjectiveEval e;
    e.gradient.resize(3);
    for (int i = 0; i < 3; ++i) {
      e.value += (x[i] - target[i]) * (x[i] - target[i]);
      e.gradient[i] = 2 * (x[i] - target[i]);
    }
    return e;
  };
  auto r = bfgs_minimize(f, {0, 0, 0});
  CHECK(r.status == OptimStatus::Converged);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(r.x[i] - target[i]) < 1e-8);
}

TEST_CASE("BFGS on Rosenbrock") {
  Objective f = [](std::span<const double> x) {
    const double a = 1 - x[0], b = x[1] - x[0] * x[0];
    return ObjectiveEval{a * a + 100 * b * b, {-2 * a - 400 * x[0] * b, 200 * b}};
  };
  BfgsConfig cfg;
  cfg.grad_tol = 1e-10;
  auto r = bfgs_minimize(f, {-1.2, 1.0}, cfg);
  CHECK(r.status == OptimStatus::Converged);
  CHECK(std::abs(r.x[0] - 1) < 1e-5);
  CHECK(std::abs(r.x[1] - 1) < 1e-5);
}

TEST_CASE("every accepted step satisfies the strong Wolfe conditions") {
  BfgsConfig cfg;
  int steps = 0;
  cfg.observer = [&](const LineSearchStep& s) {
    ++steps;
    CHECK(s.slope < 0);
    CHECK(s.new_value <= s.value + cfg.wolfe_c1 * s.alpha * s.slope + 1e-12);
    CHECK(std::abs(s.new_slope) <= cfg.wolfe_c2 * std::abs(s.slope) + 1e-12);
  };
  Objective f = [](std::span<const double> x) {
    const double a = 1 - x[0], b = x[1] - x[0] * x[0];
    return ObjectiveEval{a * a + 100 * b * b, {-2 * a - 400 * x[0] * b, 200 * b}};
  };
  bfgs_minimize(f, {-1.2, 1.0}, cfg);
  CHECK(steps > 5);
}

TEST_CASE("BFGS status reporting") {
  Objective f = [](std::span<const double> x) {
    const double a = 1 - x[0], b = x[1] - x[0] * x[0];
    return ObjectiveEval{a * a + 100 * b * b, {-2 * a - 400 * x[0] * b, 200 * b}};
  };
  BfgsConfig cfg;
  cfg.max_iter = 3;
  auto r = bfgs_minimize(f, {-1.2, 1.0}, cfg);
  CHECK(r.status == OptimStatus::MaxIterations);
  CHECK(r.iterations == 3);

  Objective bad = [](std::span<const double>) { return ObjectiveEval{std::nan(""), {0.0}}; };
  CHECK_THROWS_AS(bfgs_minimize(bad, {0.0}), NumericError);

  // Finite only on x < 1; the first step overshoots into the NaN region.
  Objective edge = [](std::span<const double> x) {
    if (x[0] >= 1) return ObjectiveEval{std::nan(""), {std::nan("")}};
    return ObjectiveEval{-x[0], {-1.0}};
  };
  auto e = bfgs_minimize(edge, {0.0});
  CHECK(e.status == OptimStatus::LineSearchFailed);
  CHECK(std::isfinite(e.value));

  BfgsConfig invalid;
  invalid.wolfe_c1 = 0.95;
  CHECK_THROWS_AS(invalid.validate(), std::invalid_argument);
}

TEST_CASE("BFGS on the calibration objective") {
  auto site = fixture::small_site(50, 12, 8);
  auto batch = CalibrationBatch::from_dataset(site.dataset);
  REQUIRE(batch.logits.size() == 200);
  auto fit = fit_calibration(batch, CalibrationMode::Matrix);
  CHECK(fit.optim.status == OptimStatus::Converged);
  CHECK(fit.optim.grad_norm <= 1e-6);
  CHECK(fit.optim.iterations < 500);
}

TEST_CASE("Adam basics") {
  AdamConfig cfg;
  cfg.learning_rate = 0.01;
  {
    std::vector<double> p{1.0, -2.0};
    AdamState st;
    for (long t = 1; t <= 5; ++t) adam_step(st, p, std::vector<double>{0.0, 0.0}, cfg, t);
    CHECK(p == std::vector<double>{1.0, -2.0});
  }
  {
    std::vector<double> p{0.0, 0.0};
    AdamState st;
    std::vector<double> prev = p;
    double last0 = 0, last1 = 0;
    for (long t = 1; t <= 2000; ++t) {
      adam_step(st, p, std::vector<double>{3.0, -0.2}, cfg, t);
      last0 = p[0] - prev[0];
      last1 = p[1] - prev[1];
      prev = p;
    }
    CHECK(last0 == doctest::Approx(-cfg.learning_rate).epsilon(1e-4));
    CHECK(last1 == doctest::Approx(cfg.learning_rate).epsilon(1e-4));
  }
  {
    // Scalar simulation: f(x) = x^2 from x = 1.
    AdamConfig c;
    c.learning_rate = 0.1;
    std::vector<double> x{1.0};
    AdamState st;
    for (long t = 1; t <= 100; ++t) adam_step(st, x, std::vector<double>{2 * x[0]}, c, t);
    CHECK(std::abs(x[0]) < 1.0);
  }
  {
    AdamState st;
    std::vector<double> p{1.0};
    CHECK_THROWS_AS(adam_step(st, p, std::vector<double>{1.0, 2.0}, cfg, 1), std::invalid_argument);
    CHECK_THROWS_AS(adam_step(st, p, std::vector<double>{1.0}, cfg, 0), std::invalid_argument);
  }
}

TEST_CASE("Adam weight decay forms") {
  AdamConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.weight_decay = 0.5;
  std::vector<double> p{2.0};
  AdamState st;
  adam_step(st, p, std::vector<double>{0.0}, cfg, 1);
  CHECK(p[0] == doctest::Approx(2.0 * (1 - 0.05)));

  cfg.decoupled_weight_decay = false;
  std::vector<double> q{2.0};
  AdamState st2;
  adam_step(st2, q, std::vector<double>{0.0}, cfg, 1);
  // The penalty gradient 1.0 becomes a unit Adam step on the first update.
  CHECK(q[0] == doctest::Approx(2.0 - 0.1).epsilon(1e-6));
}

TEST_CASE("finite differences") {
  const std::vector<double> x{0.3, -1.2, 4.0};
  auto zero = finite_diff_gradient([](std::span<const double>) { return 7.0; }, x, 1e-5);
  for (double g : zero) CHECK(g == 0.0);
  const std::vector<double> a{1.5, -2.0, 0.25};
  auto lin = finite_diff_gradient(
      [&](std::span<const double> v) { return a[0] * v[0] + a[1] * v[1] + a[2] * v[2]; }, x, 1e-5);
  for (int i = 0; i < 3; ++i) CHECK(lin[i] == doctest::Approx(a[i]).epsilon(1e-9));
}

TEST_CASE("l2 norm") { CHECK(l2_norm(std::vector<double>{3, 4}) == 5.0); }
