#include <doctest.h>

#include <cmath>
#include <string>

#include "promptot/errors.hpp"
#include "promptot/ot.hpp"
#include "promptot/rng.hpp"

using namespace promptot;

namespace {

CostMatrix random_cost(std::size_t m, std::size_t n, Rng& rng) {
  Tensor c = Tensor::zeros(m, n);
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = rng.uniform(0.0, 2.0);
  return CostMatrix{std::move(c)};
}

}  // namespace

TEST_CASE("cost_matrix endpoint geometry") {
  Tensor f = Tensor::from_rows({{2, 0}});  // normalization makes scale irrelevant
  CHECK(cost_matrix(f, Tensor::from_rows({{5, 0}})).values.item() == doctest::Approx(0.0));
  CHECK(cost_matrix(f, Tensor::from_rows({{0, 3}})).values.item() == doctest::Approx(1.0));
  CHECK(cost_matrix(f, Tensor::from_rows({{-1, 0}})).values.item() == doctest::Approx(2.0));
}

TEST_CASE("cost_matrix rejects zero rows naming the row") {
  Tensor f = Tensor::from_rows({{1, 0}, {0, 0}});
  Tensor g = Tensor::from_rows({{1, 0}});
  try {
    cost_matrix(f, g);
    FAIL("expected InvalidInputError");
  } catch (const InvalidInputError& e) {
    CHECK(std::string(e.what()).find("row 1") != std::string::npos);
  }
}

TEST_CASE("sinkhorn 1x1 has the only feasible plan") {
  CostMatrix c{Tensor::scalar(0.42)};
  auto plan = sinkhorn(c, DiscreteMeasure::uniform(1), DiscreteMeasure::uniform(1), {});
  CHECK(plan.coupling.item() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(plan.iterations_run == 100);
}

TEST_CASE("sinkhorn with zero cost transports for free") {
  CostMatrix c{Tensor::zeros(3, 4)};
  auto plan = sinkhorn(c, DiscreteMeasure::uniform(3), DiscreteMeasure::uniform(4), {});
  CHECK(ot_distance(plan, c) == doctest::Approx(0.0));
}

TEST_CASE("sinkhorn concentrates on the diagonal of a permutation cost") {
  CostMatrix c{Tensor::from_rows({{0, 1}, {1, 0}})};
  // permutation-enumeration oracle: identity costs 0, the swap costs 2
  CHECK(exact_ot_uniform(c) == doctest::Approx(0.0));
  auto plan = sinkhorn(c, DiscreteMeasure::uniform(2), DiscreteMeasure::uniform(2), {});
  CHECK(plan.coupling.at(0, 0) > 0.49);
  CHECK(plan.coupling.at(1, 1) > 0.49);
  CHECK(ot_distance(plan, c) < 1e-3);
}

TEST_CASE("sinkhorn rejects a uot config") {
  SinkhornConfig cfg;
  cfg.uot = {1.0, 1.0};
  CostMatrix c{Tensor::scalar(0.0)};
  CHECK_THROWS_AS(sinkhorn(c, DiscreteMeasure::uniform(1), DiscreteMeasure::uniform(1), cfg),
                  InvalidInputError);
}

TEST_CASE("feasibility at default settings on random instances") {
  // At t = 100 the worst random draws plateau near 2.5e-3 (verified against
  // an independent reference implementation); 5e-3 is the per-instance
  // ceiling, the typical case stays well under 1e-3.
  Rng rng(41);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t n = 4; n <= 16; n += 4) {
    for (int rep = 0; rep < 5; ++rep) {
      CostMatrix c = random_cost(n, n, rng);
      auto plan = sinkhorn(c, DiscreteMeasure::uniform(n), DiscreteMeasure::uniform(n), {});
      CHECK(plan.marginal_violation <= 5e-3);
      total += plan.marginal_violation;
      ++count;
      for (std::size_t i = 0; i < plan.coupling.size(); ++i) {
        CHECK(plan.coupling[i] >= 0.0);
      }
    }
  }
  CHECK(total / static_cast<double>(count) <= 1e-3);
  // at t = 1000 the same instances are feasible to 1e-6
  Rng rng2(41);
  CostMatrix c = random_cost(4, 4, rng2);
  SinkhornConfig long_run;
  long_run.iterations = 1000;
  auto plan = sinkhorn(c, DiscreteMeasure::uniform(4), DiscreteMeasure::uniform(4), long_run);
  CHECK(plan.marginal_violation <= 1e-6);
}

TEST_CASE("entropic distance dominates the exact optimum and the gap shrinks") {
  Rng rng(43);
  for (int rep = 0; rep < 5; ++rep) {
    const std::size_t n = 2 + rng.below(5);
    CostMatrix c = random_cost(n, n, rng);
    const double exact = exact_ot_uniform(c);
    double previous_gap = 1e18;
    for (double lambda : {0.5, 0.1, 0.02}) {
      SinkhornConfig cfg;
      cfg.lambda = lambda;
      cfg.iterations = 1000;
      auto plan = sinkhorn(c, DiscreteMeasure::uniform(n), DiscreteMeasure::uniform(n), cfg);
      const double dist = ot_distance(plan, c);
      // the t-step plan is only feasible up to its marginal violation, which
      // lets the distance undershoot the exact optimum by that order (the
      // reference implementation shows the same 1e-4-scale dips at lambda=0.02)
      CHECK(dist >= exact - 5e-4);
      const double gap = dist - exact;
      CHECK(gap <= previous_gap + 1e-6);
      previous_gap = gap;
    }
  }
}

TEST_CASE("scaling cost and lambda together leaves the plan unchanged") {
  Rng rng(47);
  CostMatrix c = random_cost(5, 5, rng);
  SinkhornConfig cfg;
  auto base = sinkhorn(c, DiscreteMeasure::uniform(5), DiscreteMeasure::uniform(5), cfg);
  const double s = 3.7;
  CostMatrix scaled{c.values};
  for (std::size_t i = 0; i < scaled.values.size(); ++i) scaled.values[i] *= s;
  SinkhornConfig cfg2;
  cfg2.lambda = cfg.lambda * s;
  auto rescaled = sinkhorn(scaled, DiscreteMeasure::uniform(5), DiscreteMeasure::uniform(5), cfg2);
  for (std::size_t i = 0; i < base.coupling.size(); ++i) {
    CHECK(std::abs(base.coupling[i] - rescaled.coupling[i]) <= 1e-9);
  }
}

TEST_CASE("uot approaches the balanced solution under stiff penalties") {
  Rng rng(53);
  CostMatrix c = random_cost(4, 4, rng);
  auto balanced = sinkhorn(c, DiscreteMeasure::uniform(4), DiscreteMeasure::uniform(4), {});
  SinkhornConfig cfg;
  cfg.uot = {1e3, 1e3};
  auto relaxed = unbalanced_sinkhorn(c, DiscreteMeasure::uniform(4), DiscreteMeasure::uniform(4),
                                     cfg);
  CHECK(std::abs(ot_distance(relaxed, c) - ot_distance(balanced, c)) <= 1e-2);
}

TEST_CASE("uot with zero cost keeps mass at most one and distance zero") {
  CostMatrix c{Tensor::zeros(3, 3)};
  SinkhornConfig cfg;
  cfg.uot = {1.0, 1.0};
  auto plan = unbalanced_sinkhorn(c, DiscreteMeasure::uniform(3), DiscreteMeasure::uniform(3),
                                  cfg);
  CHECK(ot_distance(plan, c) == doctest::Approx(0.0));
  CHECK(plan.mass() <= 1.0 + 1e-12);
}

TEST_CASE("uot 1x1 matches the scalar fixed-point iteration oracle") {
  const double lambda = 0.1, rho = 0.1, cost_value = 1.0;
  // scalar oracle: the same recurrence run on plain doubles
  const double kernel = std::exp(-cost_value / lambda);
  const double expo = rho / (rho + lambda);
  double a = 1.0, b = 1.0;
  for (int it = 0; it < 100; ++it) {
    a = std::pow(1.0 / (kernel * b), expo);
    b = std::pow(1.0 / (kernel * a), expo);
  }
  const double oracle_mass = a * kernel * b;

  CostMatrix c{Tensor::scalar(cost_value)};
  SinkhornConfig cfg;
  cfg.lambda = lambda;
  cfg.uot = {rho, rho};
  auto plan = unbalanced_sinkhorn(c, DiscreteMeasure::uniform(1), DiscreteMeasure::uniform(1),
                                  cfg);
  CHECK(plan.coupling.item() == doctest::Approx(oracle_mass).epsilon(1e-12));
}

TEST_CASE("ot_distance values and the loop oracle") {
  CostMatrix c{Tensor::scalar(0.7)};
  TransportPlan unit;
  unit.coupling = Tensor::scalar(1.0);
  CHECK(ot_distance(unit, c) == doctest::Approx(0.7));

  Rng rng(59);
  CostMatrix rc = random_cost(3, 3, rng);
  auto plan = sinkhorn(rc, DiscreteMeasure::uniform(3), DiscreteMeasure::uniform(3), {});
  double loop = 0.0;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) loop += plan.coupling.at(i, j) * rc.values.at(i, j);
  CHECK(std::abs(ot_distance(plan, rc) - loop) <= 1e-12);

  CostMatrix zero{Tensor::zeros(3, 3)};
  CHECK(ot_distance(plan, zero) == 0.0);
}

TEST_CASE("exact oracle trivial cases and the size guard") {
  CHECK(exact_ot_uniform(CostMatrix{Tensor::zeros(4, 4)}) == 0.0);
  Tensor anti = Tensor::zeros(3, 3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) anti.at(i, j) = i == j ? 0.0 : 2.0;
  CHECK(exact_ot_uniform(CostMatrix{std::move(anti)}) == 0.0);
  CHECK_THROWS_AS(exact_ot_uniform(CostMatrix{Tensor::zeros(8, 8)}), InvalidInputError);
}

TEST_CASE("gradient of the OT head is the detached plan") {
  Rng rng(61);
  Tensor f({2, 3});
  Tensor g({4, 3});
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = rng.gaussian();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = rng.gaussian();
  GradTape tape;
  Var fv = tape.parameter(f);
  Var cost = cost_matrix_var(fv, tape.constant(g));
  auto plan = sinkhorn(CostMatrix{tape.value(cost)}, DiscreteMeasure::uniform(2),
                       DiscreteMeasure::uniform(4), {});
  Var dist = ot_distance_var(cost, plan);
  CHECK(tape.value(dist).item() ==
        doctest::Approx(ot_distance(plan, CostMatrix{tape.value(cost)})).epsilon(1e-12));
  auto grads = tape.backward(dist);
  // with the plan frozen, d(dist)/dC = T; the chain through the cost must be live
  double norm = 0.0;
  for (std::size_t i = 0; i < grads[0].size(); ++i) norm += std::abs(grads[0][i]);
  CHECK(norm > 0.0);
}
