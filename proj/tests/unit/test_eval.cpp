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
#include <numeric>

#include "doctest.h"
#include "oracles.hpp"
#include "pcd/eval.hpp"

using namespace pcd;
using doctest::Approx;

TEST_SUITE("eval") {
  TEST_CASE("accuracy examples") {
    const std::vector<std::uint32_t> pred{1, 1, 0, 0, 2, 2};
    const std::vector<std::uint32_t> truth{0, 0, 1, 1, 2, 2};
    CHECK(clustering_accuracy(pred, truth, 3) == 1.0);
    const std::vector<std::uint32_t> same(6, 0);
    CHECK(clustering_accuracy(same, truth, 3) == Approx(1.0 / 3.0));
    CHECK_THROWS_AS(clustering_accuracy(std::vector<std::uint32_t>{0}, truth, 3), std::invalid_argument);
  }

  TEST_CASE("accuracy matches brute force over permutations") {
    Rng rng(17);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t k = 2 + rng.below(5);
      const std::size_t n = 5 + rng.below(60);
      std::vector<std::uint32_t> pred(n), truth(n);
      for (std::size_t i = 0; i < n; ++i) {
        pred[i] = static_cast<std::uint32_t>(rng.below(k));
        truth[i] = static_cast<std::uint32_t>(rng.below(k));
      }
      const ConfusionMatrix cm = confusion_matrix(pred, truth, k);
      REQUIRE(std::abs(clustering_accuracy(cm) - testing::brute_force_accuracy(cm.counts, k)) <= 1e-12);
    }
  }

  TEST_CASE("assignment on random costs matches enumeration") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t n = 1 + rng.below(6);
      Matrix c = testing::random_matrix(rng, n, n);
      const auto a = solve_assignment(c);
      double got = 0.0;
      for (std::size_t i = 0; i < n; ++i) got += c(i, a[i]);
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      double best = 1e300;
      do {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += c(i, perm[i]);
        best = std::min(best, s);
      } while (std::next_permutation(perm.begin(), perm.end()));
      REQUIRE(got == Approx(best).epsilon(1e-12));
    }
  }

  TEST_CASE("mapping, permutation and l1") {
    const std::vector<std::uint32_t> pred{2, 2, 0, 1};
    const std::vector<std::uint32_t> truth{0, 0, 1, 2};
    const auto map = best_cluster_mapping(confusion_matrix(pred, truth, 3));
    CHECK(map == std::vector<std::size_t>{1, 2, 0});
    const std::vector<double> per_cluster{0.1, 0.2, 0.7};
    const auto by_class = permute_to_classes(per_cluster, map);
    CHECK(by_class == std::vector<double>{0.7, 0.1, 0.2});
    CHECK(proportion_l1(std::vector<double>{0.5, 0.5}, std::vector<double>{0.2, 0.8}) == Approx(0.6));
  }

  TEST_CASE("cluster usage") {
    const std::vector<std::uint32_t> pred{0, 0, 0, 2};
    const ClusterUsage u = cluster_usage(pred, 3);
    CHECK(u.counts == std::vector<std::uint64_t>{3, 0, 1});
    CHECK(u.fractions[0] == 0.75);
    CHECK(u.min_fraction == 0.0);
  }
}
