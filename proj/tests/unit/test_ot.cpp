// Copyright 2026 The PCD Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <chrono>
#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "pcd/ot.hpp"

using namespace pcd;
using doctest::Approx;

namespace {

ot::CostMatrix random_cost(Rng& rng, std::size_t m, std::size_t k) {
  Matrix c(m, k);
  for (double& x : c.data()) x = 2.0 * rng.uniform();
  return {c};
}

double max_marginal_error(const ot::TransportPlan& p, std::span<const double> u, std::span<const double> v) {
  double r = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    double s = 0.0;
    for (double x : p.plan.row(i)) s += x;
    r = std::max(r, std::abs(s - u[i]));
  }
  for (std::size_t j = 0; j < v.size(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) s += p.plan(i, j);
    r = std::max(r, std::abs(s - v[j]));
  }
  return r;
}

}  // namespace

TEST_SUITE("ot") {
  TEST_CASE("cosine cost examples") {
    Matrix mu(3, 2, {1.0, 0.0, 0.0, 1.0, -1.0, 0.0});
    Matrix f(1, 2, {2.0, 0.0});
    const auto c = ot::build_cost(f, mu);
    CHECK(c.values(0, 0) == Approx(0.0));
    CHECK(c.values(0, 1) == Approx(1.0));
    CHECK(c.values(0, 2) == Approx(2.0));
    Matrix wrong(1, 3);
    CHECK_THROWS_AS(ot::build_cost(wrong, mu), std::invalid_argument);
    Rng rng(1);
    const Matrix a = testing::random_matrix(rng, 30, 5), b = testing::random_matrix(rng, 7, 5);
    const auto rc = ot::build_cost(a, b);
    for (double x : rc.values.data()) {
      CHECK(x >= 0.0);
      CHECK(x <= 2.0);
    }
  }

  TEST_CASE("constant cost gives the outer product plan") {
    Rng rng(5);
    for (int t = 0; t < 10; ++t) {
      const std::size_t m = 2 + rng.below(6), k = 2 + rng.below(5);
      Matrix c(m, k);
      c.fill(0.7);
      const auto u = testing::random_simplex(rng, m);
      const auto v = testing::random_simplex(rng, k);
      const auto p = ot::sinkhorn({c}, u, v, {});
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j) CHECK(std::abs(p.plan(i, j) - u[i] * v[j]) <= 1e-8);
      CHECK(ot::transport_cost(p, {c}) == Approx(0.7).epsilon(1e-10));
    }
  }

  TEST_CASE("3x2 instance at small epsilon matches the LP optimum") {
    Rng rng(17);
    for (int t = 0; t < 20; ++t) {
      const auto cost = random_cost(rng, 3, 2);
      const auto u = uniform(3);
      const std::vector<double> v{0.5, 0.5};
      ot::SinkhornConfig cfg;
      cfg.epsilon = 1e-3;
      cfg.max_iters = 100000;
      const auto p = ot::sinkhorn(cost, u, v, cfg);
      const double lp = testing::lp_transport_optimum(cost.values, u, v);
      CHECK(std::abs(ot::transport_cost(p, cost) - lp) <= 1e-3);
    }
  }

  TEST_CASE("64x10 at epsilon 0.01 converges to 1e-6") {
    Rng rng(3);
    for (int t = 0; t < 5; ++t) {
      const auto cost = random_cost(rng, 64, 10);
      const auto u = uniform(64), v = uniform(10);
      const auto p = ot::sinkhorn(cost, u, v, {});
      CHECK(p.converged);
      CHECK(p.residual <= 1e-6);
      CHECK(max_marginal_error(p, u, v) <= 1e-6);
      for (double x : p.plan.data()) CHECK(x > 0.0);
    }
  }

  TEST_CASE("log domain stays finite down to epsilon 1e-4") {
    Rng rng(8);
    for (int t = 0; t < 10; ++t) {
      const auto cost = random_cost(rng, 1 + rng.below(20), 2 + rng.below(8));
      ot::SinkhornConfig cfg;
      cfg.epsilon = 1e-4;
      cfg.max_iters = 200;
      const auto p = ot::sinkhorn(cost, uniform(cost.rows()), testing::random_simplex(rng, cost.cols()), cfg);
      CHECK(p.plan.all_finite());
      CHECK(std::isfinite(p.residual));
    }
  }

  TEST_CASE("residual is non-increasing across recorded checkpoints") {
    Rng rng(21);
    for (int t = 0; t < 10; ++t) {
      const auto cost = random_cost(rng, 16, 5);
      ot::SinkhornConfig cfg;
      cfg.record_trace = true;
      cfg.marginal_tol = 1e-12;
      cfg.max_iters = 400;
      const auto p = ot::sinkhorn(cost, uniform(16), testing::random_simplex(rng, 5), cfg);
      REQUIRE(p.residual_trace.size() >= 2);
      for (std::size_t i = 1; i < p.residual_trace.size(); ++i) {
        CHECK(p.residual_trace[i] <= p.residual_trace[i - 1] * (1.0 + 1e-9) + 1e-15);
      }
    }
  }

  TEST_CASE("plan is invariant to a constant cost shift") {
    Rng rng(12);
    const auto cost = random_cost(rng, 8, 4);
    ot::CostMatrix shifted = cost;
    for (double& x : shifted.values.data()) x += 0.37;
    const auto u = uniform(8), v = testing::random_simplex(rng, 4);
    const auto a = ot::sinkhorn(cost, u, v, {});
    const auto b = ot::sinkhorn(shifted, u, v, {});
    for (std::size_t i = 0; i < a.plan.size(); ++i) CHECK(std::abs(a.plan.data()[i] - b.plan.data()[i]) <= 1e-8);
  }

  TEST_CASE("zero column marginals are clamped and renormalised") {
    Rng rng(2);
    const auto cost = random_cost(rng, 6, 3);
    const std::vector<double> v{1.0, 0.0, 0.0};
    const auto p = ot::sinkhorn(cost, uniform(6), v, {});
    CHECK(p.plan.all_finite());
    double s = 0.0;
    for (std::size_t i = 0; i < 6; ++i) s += p.plan(i, 1);
    CHECK(s > 0.0);
    CHECK(s < 1e-5);
  }

  TEST_CASE("transport cost examples") {
    Matrix c(3, 3);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) c(i, j) = i == j ? 0.0 : 1.0;
    Matrix diag(3, 3);
    for (std::size_t i = 0; i < 3; ++i) diag(i, i) = 1.0 / 3.0;
    CHECK(ot::transport_cost(diag, {c}) == 0.0);
    Rng rng(4);
    const auto cost = random_cost(rng, 4, 3);
    const Matrix plan = testing::random_prob_rows(rng, 4, 3);
    double naive = 0.0;
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 3; ++j) naive += plan(i, j) * cost.values(i, j);
    CHECK(std::abs(ot::transport_cost(plan, cost) - naive) <= 1e-12);
    Matrix wrong(3, 4);
    CHECK_THROWS_AS(ot::transport_cost(wrong, cost), std::invalid_argument);
  }

  TEST_CASE("sinkhorn errors") {
    Rng rng(6);
    auto cost = random_cost(rng, 3, 2);
    const std::vector<double> v{0.5, 0.5};
    CHECK_THROWS_AS(ot::sinkhorn(cost, uniform(4), v, {}), std::invalid_argument);
    CHECK_THROWS_AS(ot::sinkhorn(cost, uniform(3), uniform(3), {}), std::invalid_argument);
    cost.values(1, 1) = std::nan("");
    CHECK_THROWS_AS(ot::sinkhorn(cost, uniform(3), v, {}), std::invalid_argument);
    ot::SinkhornConfig bad;
    bad.epsilon = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  }

  TEST_CASE("cost gradient matches finite differences") {
    Rng rng(31);
    Matrix f = testing::random_matrix(rng, 5, 3);
    Matrix mu = testing::random_matrix(rng, 4, 3);
    const Matrix w = testing::random_prob_rows(rng, 5, 4);
    auto value = [&] { return ot::transport_cost(w, ot::build_cost(f, mu)); };
    Matrix gf(5, 3), gp(4, 3);
    ot::cost_gradient(f, mu, w, 1.0, gf, gp);
    for (std::size_t i = 0; i < f.size(); ++i) {
      const double fd = testing::central_difference(value, f.data()[i], 1e-6);
      CHECK(gf.data()[i] == Approx(fd).epsilon(1e-6));
    }
    for (std::size_t i = 0; i < mu.size(); ++i) {
      const double fd = testing::central_difference(value, mu.data()[i], 1e-6);
      CHECK(gp.data()[i] == Approx(fd).epsilon(1e-6));
    }
  }
}
