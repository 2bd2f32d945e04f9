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

#pragma once

// Independent reference implementations used to derive expected values.
// None of these share code paths with the library routines they check.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "pcd/model.hpp"
#include "pcd/numkit.hpp"

namespace pcd::testing {

/// Exact optimum of min <T, C> over the transportation polytope Π(u, v), found
/// by enumerating every basic feasible solution (spanning trees of the
/// bipartite support graph with m + n - 1 cells).
double lp_transport_optimum(const Matrix& cost, std::span<const double> u, std::span<const double> v);

/// Clustering accuracy by trying every permutation of K labels.
double brute_force_accuracy(const std::vector<std::uint64_t>& counts_pred_by_truth, std::size_t k);

/// Triple-loop matrix product.
Matrix naive_matmul(const Matrix& a, const Matrix& b);

/// Central finite-difference derivative of f with respect to x.
double central_difference(const std::function<double()>& f, double& x, double h);

struct GradCheck {
  double worst_relative = 0.0;
  std::size_t checked = 0;
};

/// Compares analytic gradients against central differences for every model
/// parameter. Entries where both values are below `abs_floor` are skipped.
GradCheck check_model_gradients(ClusterModel& model, const std::function<double()>& loss, const Gradients& analytic,
                                double h = 1e-5, double abs_floor = 1e-9);

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0);
ProbVector random_simplex(Rng& rng, std::size_t k);
Matrix random_prob_rows(Rng& rng, std::size_t rows, std::size_t k);

}  // namespace pcd::testing
