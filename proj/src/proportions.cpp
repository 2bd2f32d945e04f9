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

#include "pcd/proportions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace pcd {

ProportionState ProportionState::uniform_prior(std::size_t num_domains, std::size_t k, double beta0,
                                               double beta_min_ratio, std::size_t total_steps) {
  if (num_domains == 0) throw std::invalid_argument("ProportionState: need at least one domain");
  ProportionState s;
  s.domains.assign(num_domains, uniform(k));
  s.beta0 = beta0;
  s.beta_min = beta_min_ratio * beta0;
  s.total_steps = std::max<std::size_t>(total_steps, 1);
  s.validate();
  return s;
}

void ProportionState::validate() const {
  if (!(beta0 > 0.0 && beta0 <= 1.0)) throw std::invalid_argument("ProportionState: beta0 must lie in (0, 1]");
  if (!(beta_min >= 0.0 && beta_min <= beta0)) throw std::invalid_argument("ProportionState: need 0 <= beta_min <= beta0");
  for (const auto& b : domains) require_prob_vector(b, "ProportionState");
}

Matrix posterior(const Matrix& logits, std::span<const double> prior) {
  if (prior.size() != logits.cols()) throw std::invalid_argument("posterior: prior length mismatch");
  bool any_positive = false;
  for (double b : prior) {
    if (!std::isfinite(b) || b < 0.0) throw std::invalid_argument("posterior: invalid prior entry");
    any_positive = any_positive || b > 0.0;
  }
  if (!any_positive) throw std::invalid_argument("posterior: all-zero prior");
  const double neg_inf = -std::numeric_limits<double>::infinity();
  std::vector<double> log_prior(prior.size());
  for (std::size_t k = 0; k < prior.size(); ++k) log_prior[k] = prior[k] > 0.0 ? std::log(prior[k]) : neg_inf;

  Matrix out(logits.rows(), logits.cols());
  std::vector<double> s(prior.size());
  for (std::size_t j = 0; j < logits.rows(); ++j) {
    for (std::size_t k = 0; k < prior.size(); ++k) {
      if (!std::isfinite(logits(j, k))) throw std::invalid_argument("posterior: non-finite logit");
      s[k] = logits(j, k) + log_prior[k];
    }
    const double lse = log_sum_exp(s);
    for (std::size_t k = 0; k < prior.size(); ++k) out(j, k) = prior[k] > 0.0 ? std::exp(s[k] - lse) : 0.0;
  }
  return out;
}

ProbVector batch_estimate(const Matrix& posteriors) {
  if (posteriors.rows() == 0) throw std::invalid_argument("batch_estimate: empty batch");
  return column_mean(posteriors);
}

double beta_at(const ProportionState& state, double progress) {
  const double p = std::clamp(progress, 0.0, 1.0);
  return state.beta_min + (state.beta0 - state.beta_min) * (1.0 + std::cos(std::numbers::pi * p)) / 2.0;
}

void ema_update_with(ProportionState& state, std::size_t domain, std::span<const double> estimate, double beta) {
  if (domain >= state.domains.size()) throw std::out_of_range("ema_update: unknown domain");
  ProbVector& b = state.domains[domain];
  if (estimate.size() != b.size()) throw std::invalid_argument("ema_update: length mismatch");
  require_prob_vector(estimate, "ema_update estimate");
  double sum = 0.0;
  for (std::size_t k = 0; k < b.size(); ++k) {
    b[k] = beta * b[k] + (1.0 - beta) * estimate[k];
    sum += b[k];
  }
  for (double& x : b) x /= sum;
}

void ema_update(ProportionState& state, std::size_t domain, std::span<const double> estimate) {
  const double progress = static_cast<double>(state.step) / static_cast<double>(state.total_steps);
  ema_update_with(state, domain, estimate, beta_at(state, progress));
}

void advance(ProportionState& state) { ++state.step; }

}  // namespace pcd
