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

#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "pcd/numkit.hpp"

using namespace pcd;
using doctest::Approx;

TEST_SUITE("numkit") {
  TEST_CASE("softmax examples") {
    const std::vector<double> zero{0.0, 0.0};
    const auto a = softmax(zero);
    CHECK(a[0] == 0.5);
    CHECK(a[1] == 0.5);

    const std::vector<double> one{1.0, 0.0};
    const auto b = softmax(one);
    const double e = std::exp(1.0);
    CHECK(b[0] == Approx(e / (e + 1.0)).epsilon(1e-12));
    CHECK(b[0] == Approx(0.7311).epsilon(1e-4));
    CHECK(b[1] == Approx(0.2689).epsilon(1e-4));

    Rng rng(4);
    for (int t = 0; t < 20; ++t) {
      std::vector<double> x{rng.normal(), rng.normal(), rng.normal()};
      std::vector<double> shifted = x;
      const double c = 100.0 * rng.normal();
      for (double& v : shifted) v += c;
      const auto p = softmax(x);
      const auto q = softmax(shifted);
      for (std::size_t i = 0; i < 3; ++i) CHECK(p[i] == Approx(q[i]).epsilon(1e-12));
    }
  }

  TEST_CASE("softmax is always a probability vector") {
    Rng rng(9);
    for (int t = 0; t < 200; ++t) {
      std::vector<double> x(1 + rng.below(8));
      for (double& v : x) v = 300.0 * rng.normal();
      CHECK(is_prob_vector(softmax(x, 0.01 + rng.uniform())));
    }
  }

  TEST_CASE("softmax errors") {
    const std::vector<double> bad{1.0, std::nan("")};
    CHECK_THROWS_AS(softmax(bad), std::invalid_argument);
    const std::vector<double> inf{1.0, INFINITY};
    CHECK_THROWS_AS(softmax(inf), std::invalid_argument);
    const std::vector<double> ok{1.0, 2.0};
    CHECK_THROWS_AS(softmax(ok, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(softmax(ok, -1.0), std::invalid_argument);
  }

  TEST_CASE("entropy examples") {
    CHECK(entropy(one_hot(4, 2)) == 0.0);
    CHECK(entropy(uniform(4)) == Approx(std::log(4.0)).epsilon(1e-12));
    CHECK(std::abs(entropy(uniform(4)) - std::log(4.0)) <= 1e-12);
    const std::vector<double> half{0.5, 0.5};
    CHECK(entropy(half) == Approx(0.6931).epsilon(1e-4));
    for (std::size_t k = 1; k <= 64; ++k) CHECK(std::abs(entropy(uniform(k)) - std::log(static_cast<double>(k))) <= 1e-12);
  }

  TEST_CASE("kl divergence examples and property") {
    const std::vector<double> p{0.2, 0.3, 0.5};
    CHECK(kl_div(p, p) == 0.0);
    const std::vector<double> hard{1.0, 0.0}, half{0.5, 0.5};
    CHECK(kl_div(hard, half) == Approx(std::log(2.0)).epsilon(1e-12));
    const double clamped = kl_div(half, hard);
    CHECK(std::isfinite(clamped));
    CHECK(clamped > 5.0);
    const std::vector<double> short_q{1.0};
    CHECK_THROWS_AS(kl_div(half, short_q), std::invalid_argument);

    Rng rng(11);
    for (int t = 0; t < 500; ++t) {
      const std::size_t k = 2 + rng.below(6);
      const auto a = testing::random_simplex(rng, k);
      const auto b = testing::random_simplex(rng, k);
      CHECK(kl_div(a, b) >= 0.0);
    }
  }

  TEST_CASE("sample_beta reproducible and in range") {
    Rng a(123), b(123);
    const double x = sample_beta(0.3, a);
    const double y = sample_beta(0.3, b);
    CHECK(x == y);
    CHECK(x >= 0.0);
    CHECK(x <= 1.0);
    Rng c(5);
    CHECK_THROWS_AS(sample_beta(0.0, c), std::invalid_argument);
    CHECK_THROWS_AS(sample_beta(-1.0, c), std::invalid_argument);
  }

  TEST_CASE("Beta(0.3, 0.3) mean is one half") {
    Rng rng(77);
    double s = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
      const double v = sample_beta(0.3, rng);
      REQUIRE(v >= 0.0);
      REQUIRE(v <= 1.0);
      s += v;
    }
    CHECK(std::abs(s / n - 0.5) <= 0.01);
  }

  TEST_CASE("Beta(1, 1) passes a KS test against the uniform CDF") {
    Rng rng(2024);
    const int n = 100000;
    std::vector<double> v(n);
    for (double& x : v) x = sample_beta(1.0, rng);
    std::sort(v.begin(), v.end());
    double d = 0.0;
    for (int i = 0; i < n; ++i) {
      d = std::max(d, std::abs((i + 1.0) / n - v[i]));
      d = std::max(d, std::abs(v[i] - static_cast<double>(i) / n));
    }
    CHECK(d < 0.01);
  }

  TEST_CASE("matrix helpers") {
    Rng rng(3);
    const Matrix a = testing::random_matrix(rng, 3, 4);
    const Matrix b = testing::random_matrix(rng, 4, 2);
    CHECK(matmul(Matrix::identity(3), a) == a);
    const Matrix ab = matmul(a, b);
    const Matrix oracle = testing::naive_matmul(a, b);
    for (std::size_t i = 0; i < ab.size(); ++i) CHECK(ab.data()[i] == Approx(oracle.data()[i]).epsilon(1e-12));
    const Matrix lhs = transpose(ab);
    const Matrix rhs = matmul(transpose(b), transpose(a));
    for (std::size_t i = 0; i < lhs.size(); ++i) CHECK(lhs.data()[i] == Approx(rhs.data()[i]).epsilon(1e-12));

    const Matrix bt = matmul_bt(a, transpose(b));
    const Matrix at = matmul_at(transpose(a), b);
    for (std::size_t i = 0; i < ab.size(); ++i) {
      CHECK(bt.data()[i] == Approx(oracle.data()[i]).epsilon(1e-12));
      CHECK(at.data()[i] == Approx(oracle.data()[i]).epsilon(1e-12));
    }

    Matrix pos(3, 5);
    for (double& x : pos.data()) x = 0.1 + rng.uniform();
    const Matrix rn = row_normalize(pos);
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0.0;
      for (double x : rn.row(r)) s += x;
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
    CHECK_THROWS_AS(matmul(a, a), std::invalid_argument);
    CHECK_THROWS_AS(matmul_bt(a, b), std::invalid_argument);
    CHECK_THROWS_AS(matmul_at(a, b), std::invalid_argument);
    Matrix zero_row(2, 2);
    zero_row(1, 0) = 1.0;
    CHECK_THROWS_AS(row_normalize(zero_row), std::invalid_argument);
    CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>(3, 0.0)), std::invalid_argument);
  }

  TEST_CASE("argmax ties go to the lowest index") {
    const std::vector<double> x{1.0, 3.0, 3.0, 2.0};
    CHECK(argmax(x) == 1);
    const std::vector<double> empty;
    CHECK_THROWS_AS(argmax(empty), std::invalid_argument);
  }

  TEST_CASE("rng streams are deterministic and splittable") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c(42);
    const Rng s1 = c.split(1), s2 = c.split(2), s1b = c.split(1);
    Rng x = s1, y = s2, z = s1b;
    const auto vx = x.next_u64();
    CHECK(vx != y.next_u64());
    CHECK(vx == z.next_u64());
    Rng p(8);
    auto perm = p.permutation(50);
    std::sort(perm.begin(), perm.end());
    for (std::size_t i = 0; i < 50; ++i) CHECK(perm[i] == i);
    CHECK_THROWS_AS(p.below(0), std::invalid_argument);
    for (int i = 0; i < 1000; ++i) {
      const double u = p.uniform_open();
      CHECK(u > 0.0);
      CHECK(u < 1.0);
    }
  }

  TEST_CASE("probability vector checks") {
    CHECK(is_prob_vector(uniform(3)));
    const std::vector<double> neg{1.5, -0.5};
    CHECK_FALSE(is_prob_vector(neg));
    const std::vector<double> off{0.5, 0.4};
    CHECK_FALSE(is_prob_vector(off));
    CHECK_THROWS_AS(require_prob_vector(off, "test"), std::invalid_argument);
    CHECK_THROWS_AS(uniform(0), std::invalid_argument);
    CHECK_THROWS_AS(one_hot(3, 3), std::out_of_range);
    const std::vector<double> big{1000.0, 1000.0};
    CHECK(log_sum_exp(big) == Approx(1000.0 + std::log(2.0)).epsilon(1e-12));
  }
}
