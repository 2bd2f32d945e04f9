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
#include <vector>

#include "pcd/numkit.hpp"

namespace pcd {

/// Per-domain cluster proportions, refined by an EM-style posterior average
/// smoothed with an exponential moving average whose weight follows a cosine
/// schedule from beta0 down to beta_min.
struct ProportionState {
  std::vector<ProbVector> domains;
  double beta0 = 0.9999;
  double beta_min = 0.9 * 0.9999;
  std::size_t step = 0;
  std::size_t total_steps = 1;

  /// Uniform proportions for `num_domains` domains over K clusters.
  static ProportionState uniform_prior(std::size_t num_domains, std::size_t k, double beta0,
                                       double beta_min_ratio = 0.9, std::size_t total_steps = 1);

  std::size_t k() const { return domains.empty() ? 0 : domains.front().size(); }
  void validate() const;
};

/// π(k | f_j) ∝ exp(logit_jk) · B_k, evaluated in log space.
Matrix posterior(const Matrix& logits, std::span<const double> prior);

/// Column means of the posterior matrix.
ProbVector batch_estimate(const Matrix& posteriors);

/// β(p) = beta_min + (beta0 - beta_min)(1 + cos πp)/2, p clamped to [0, 1].
double beta_at(const ProportionState& state, double progress);

/// B_d ← β B_d + (1 - β) B̃ with β = beta_at(state, step / total_steps).
/// Does not advance the step counter; call advance() once per batch.
void ema_update(ProportionState& state, std::size_t domain, std::span<const double> estimate);
/// Same update with an explicit weight.
void ema_update_with(ProportionState& state, std::size_t domain, std::span<const double> estimate, double beta);
void advance(ProportionState& state);

}  // namespace pcd
