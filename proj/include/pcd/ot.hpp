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

#include <cstddef>

#include "pcd/numkit.hpp"

namespace pcd::ot {

/// Cosine dissimilarity between batch features (rows) and prototypes (rows).
/// Entries lie in [0, 2].
struct CostMatrix {
  Matrix values;  // M x K

  std::size_t rows() const { return values.rows(); }
  std::size_t cols() const { return values.cols(); }
};

struct SinkhornConfig {
  double epsilon = 0.01;
  std::size_t max_iters = 5000;
  double marginal_tol = 1e-6;
  /// Prototype-side marginal entries are clamped to at least this value and
  /// renormalised before solving.
  double min_marginal_clamp = 1e-6;
  /// Record the marginal residual every 10 iterations into the plan.
  bool record_trace = false;

  void validate() const;
};

struct TransportPlan {
  Matrix plan;                   // M x K, strictly positive
  std::vector<double> row_mass;  // achieved T·1
  std::vector<double> col_mass;  // achieved 1ᵀT
  std::vector<double> row_target;
  std::vector<double> col_target;  // v after clamping
  std::size_t iterations = 0;
  double residual = 0.0;  // max(|T1 - u|_inf, |1ᵀT - v|_inf)
  bool converged = false;
  std::vector<double> residual_trace;
};

inline constexpr double kNormClamp = 1e-12;

CostMatrix build_cost(const Matrix& features, const Matrix& prototypes);

/// Entropic OT  min <T, C> - ε h(T)  over Π(u, v), solved with log-domain
/// Sinkhorn updates on the dual potentials.
TransportPlan sinkhorn(const CostMatrix& cost, std::span<const double> u, std::span<const double> v,
                       const SinkhornConfig& cfg = {});

/// Σ_jk T_jk C_jk.
double transport_cost(const TransportPlan& plan, const CostMatrix& cost);
double transport_cost(const Matrix& plan, const CostMatrix& cost);

/// <T, C> + ε Σ T log T, the regularised objective that Sinkhorn minimises.
double regularized_objective(const Matrix& plan, const CostMatrix& cost, double epsilon);

/// Gradient of Σ_jk W_jk C_jk(features, prototypes) for a fixed weight matrix
/// W. Results are accumulated (scaled by `scale`) into grad_features and
/// grad_prototypes, which must be pre-shaped.
void cost_gradient(const Matrix& features, const Matrix& prototypes, const Matrix& weights,
                   double scale, Matrix& grad_features, Matrix& grad_prototypes);

}  // namespace pcd::ot
