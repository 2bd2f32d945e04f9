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

#include "pcd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace pcd {

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t s = 0;
  for (auto c : counts) s += c;
  return s;
}

ConfusionMatrix confusion_matrix(std::span<const std::uint32_t> pred, std::span<const std::uint32_t> truth,
                                 std::size_t k) {
  if (pred.size() != truth.size()) throw std::invalid_argument("confusion_matrix: length mismatch");
  if (k == 0) throw std::invalid_argument("confusion_matrix: K must be positive");
  ConfusionMatrix cm;
  cm.k = k;
  cm.counts.assign(k * k, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] >= k || truth[i] >= k) throw std::invalid_argument("confusion_matrix: label outside [0, K)");
    ++cm.counts[pred[i] * k + truth[i]];
  }
  return cm;
}

std::vector<std::size_t> solve_assignment(const Matrix& cost) {
  const std::size_t n = cost.rows();
  if (cost.cols() != n) throw std::invalid_argument("solve_assignment: cost matrix must be square");
  if (n == 0) return {};
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials; column 0 is a sentinel.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> owner(n + 1, 0), way(n + 1, 0);
  for (std::size_t row = 1; row <= n; ++row) {
    owner[0] = row;
    std::size_t col0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[col0] = true;
      const std::size_t r0 = owner[col0];
      double delta = inf;
      std::size_t col1 = 0;
      for (std::size_t c = 1; c <= n; ++c) {
        if (used[c]) continue;
        const double cur = cost(r0 - 1, c - 1) - u[r0] - v[c];
        if (cur < minv[c]) {
          minv[c] = cur;
          way[c] = col0;
        }
        // Strict comparison keeps the lowest-index column on ties.
        if (minv[c] < delta) {
          delta = minv[c];
          col1 = c;
        }
      }
      for (std::size_t c = 0; c <= n; ++c) {
        if (used[c]) {
          u[owner[c]] += delta;
          v[c] -= delta;
        } else {
          minv[c] -= delta;
        }
      }
      col0 = col1;
    } while (owner[col0] != 0);
    do {
      const std::size_t col1 = way[col0];
      owner[col0] = owner[col1];
      col0 = col1;
    } while (col0 != 0);
  }
  std::vector<std::size_t> assignment(n);
  for (std::size_t c = 1; c <= n; ++c) assignment[owner[c] - 1] = c - 1;
  return assignment;
}

std::vector<std::size_t> best_cluster_mapping(const ConfusionMatrix& cm) {
  Matrix cost(cm.k, cm.k);
  std::uint64_t max_count = 0;
  for (auto c : cm.counts) max_count = std::max(max_count, c);
  for (std::size_t p = 0; p < cm.k; ++p)
    for (std::size_t t = 0; t < cm.k; ++t) cost(p, t) = static_cast<double>(max_count - cm(p, t));
  return solve_assignment(cost);
}

double clustering_accuracy(const ConfusionMatrix& cm) {
  const std::uint64_t n = cm.total();
  if (n == 0) throw std::invalid_argument("clustering_accuracy: no samples");
  const auto mapping = best_cluster_mapping(cm);
  std::uint64_t matched = 0;
  for (std::size_t p = 0; p < cm.k; ++p) matched += cm(p, mapping[p]);
  return static_cast<double>(matched) / static_cast<double>(n);
}

double clustering_accuracy(std::span<const std::uint32_t> pred, std::span<const std::uint32_t> truth, std::size_t k) {
  return clustering_accuracy(confusion_matrix(pred, truth, k));
}

double proportion_l1(std::span<const double> estimated, std::span<const double> truth) {
  if (estimated.size() != truth.size()) throw std::invalid_argument("proportion_l1: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < estimated.size(); ++i) s += std::abs(estimated[i] - truth[i]);
  return s;
}

ProbVector permute_to_classes(std::span<const double> per_cluster, std::span<const std::size_t> mapping) {
  if (per_cluster.size() != mapping.size()) throw std::invalid_argument("permute_to_classes: length mismatch");
  ProbVector out(per_cluster.size(), 0.0);
  for (std::size_t p = 0; p < mapping.size(); ++p) {
    if (mapping[p] >= out.size()) throw std::out_of_range("permute_to_classes: mapping out of range");
    out[mapping[p]] += per_cluster[p];
  }
  return out;
}

ClusterUsage cluster_usage(std::span<const std::uint32_t> pred, std::size_t k) {
  ClusterUsage u;
  u.counts.assign(k, 0);
  for (auto p : pred) {
    if (p >= k) throw std::invalid_argument("cluster_usage: label outside [0, K)");
    ++u.counts[p];
  }
  u.fractions.assign(k, 0.0);
  if (!pred.empty()) {
    for (std::size_t i = 0; i < k; ++i) u.fractions[i] = static_cast<double>(u.counts[i]) / static_cast<double>(pred.size());
  }
  u.min_fraction = k ? *std::min_element(u.fractions.begin(), u.fractions.end()) : 0.0;
  return u;
}

}  // namespace pcd
