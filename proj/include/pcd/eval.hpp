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

#include <cstdint>
#include <vector>

#include "pcd/numkit.hpp"

namespace pcd {

/// counts[pred][truth].
struct ConfusionMatrix {
  std::size_t k = 0;
  std::vector<std::uint64_t> counts;  // k x k row-major

  std::uint64_t operator()(std::size_t pred, std::size_t truth) const { return counts[pred * k + truth]; }
  std::uint64_t total() const;
};

ConfusionMatrix confusion_matrix(std::span<const std::uint32_t> pred, std::span<const std::uint32_t> truth,
                                 std::size_t k);

/// Minimum-cost perfect assignment on a square cost matrix (Kuhn–Munkres
/// with potentials, O(n³)). Returns row -> column.
std::vector<std::size_t> solve_assignment(const Matrix& cost);

/// Cluster -> class mapping that maximises matched counts.
std::vector<std::size_t> best_cluster_mapping(const ConfusionMatrix& cm);

double clustering_accuracy(std::span<const std::uint32_t> pred, std::span<const std::uint32_t> truth, std::size_t k);
double clustering_accuracy(const ConfusionMatrix& cm);

/// Σ |est - truth|.
double proportion_l1(std::span<const double> estimated, std::span<const double> truth);

/// Reorders a per-cluster vector into class order using a cluster -> class map.
ProbVector permute_to_classes(std::span<const double> per_cluster, std::span<const std::size_t> mapping);

struct ClusterUsage {
  std::vector<double> fractions;
  std::vector<std::uint64_t> counts;
  double min_fraction = 0.0;
};

ClusterUsage cluster_usage(std::span<const std::uint32_t> pred, std::size_t k);

}  // namespace pcd
