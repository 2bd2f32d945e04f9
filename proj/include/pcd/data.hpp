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
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pcd/numkit.hpp"

namespace pcd {

/// One domain's samples. Labels are for evaluation only; training never
/// reads them.
struct FeatureDataset {
  std::uint32_t domain = 0;
  Matrix features;                               // n x d
  std::optional<std::vector<std::uint32_t>> labels;
  std::vector<std::uint64_t> ids;                // stable per-sample ids

  std::size_t size() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }
  bool has_labels() const { return labels.has_value(); }

  /// Throws if the invariants fail (n >= 1, ids/labels sized, labels < k
  /// when k is given).
  void validate(std::optional<std::size_t> k = std::nullopt) const;
  FeatureDataset subset(std::span<const std::size_t> rows) const;
};

/// Merges datasets into one domain (ids are reassigned 0..n-1).
FeatureDataset concatenate(std::span<const FeatureDataset> parts, std::uint32_t domain = 0);

struct SyntheticSpec {
  std::size_t k = 5;
  std::size_t dim = 20;
  std::size_t source_domains = 3;
  std::size_t samples_per_domain = 500;
  std::size_t target_samples = 500;
  ProbVector source_proportions;  // empty = uniform
  ProbVector target_proportions;  // empty = uniform
  double centroid_scale = 1.0;
  double rotation_scale = 0.1;   // strength of the per-domain orthogonal transform
  double translation_scale = 0.5;
  double noise = 0.5;
  double target_noise = 1.0;     // < 0 = same as noise
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticData {
  std::vector<FeatureDataset> sources;
  FeatureDataset target;
  Matrix centroids;  // K x d, before domain transforms
};

SyntheticData generate(const SyntheticSpec& spec);

/// Keeps each sample of the first floor(K/2) classes with probability
/// 1 - drop_fraction; all others are kept.
FeatureDataset subsample_imbalanced(const FeatureDataset& data, std::size_t k, double drop_fraction,
                                    std::uint64_t seed);

/// Seeded, label-stratified (when labels exist) split into (train, validation).
std::pair<FeatureDataset, FeatureDataset> split(const FeatureDataset& data, double train_fraction,
                                                std::uint64_t seed);

/// Class frequencies of a labelled dataset.
ProbVector label_proportions(const FeatureDataset& data, std::size_t k);

// "PCDD" binary format: magic, u32 version, u32 n, u32 d, u32 flags (bit 0 =
// labels present), n*d f64 row-major little-endian, then n u32 labels.
inline constexpr std::uint32_t kFeatureFileVersion = 1;

std::string serialize_dataset(const FeatureDataset& data);
FeatureDataset deserialize_dataset(const std::string& bytes, std::uint32_t domain = 0);
void save_dataset(const FeatureDataset& data, const std::filesystem::path& path);
FeatureDataset load_dataset(const std::filesystem::path& path, std::uint32_t domain = 0);

/// CSV with a header row; a column named `label` holds integer labels and
/// every other column is a feature.
FeatureDataset parse_csv(const std::string& text, std::uint32_t domain = 0);
FeatureDataset load_csv(const std::filesystem::path& path, std::uint32_t domain = 0);
std::string to_csv(const FeatureDataset& data);

/// Loads by extension: .csv goes through the CSV reader, anything else is PCDD.
FeatureDataset load_features(const std::filesystem::path& path, std::uint32_t domain = 0);

}  // namespace pcd
