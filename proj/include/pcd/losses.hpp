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
#include <optional>
#include <string>
#include <vector>

#include "pcd/model.hpp"
#include "pcd/numkit.hpp"

namespace pcd {

/// Scalar loss plus gradients. Which gradients are populated depends on the
/// loss: transport fills features/prototypes, the probability losses fill
/// logits (with respect to the softmax input).
struct LossBundle {
  double value = 0.0;
  Matrix grad_features;
  Matrix grad_prototypes;
  Matrix grad_logits;
};

/// Rows of a joint batch that belong to one domain, with the transport plan
/// solved for them (plan row j couples batch row rows[j]).
struct DomainBlock {
  std::vector<std::size_t> rows;
  Matrix plan;
};

/// (1/D') Σ_d <T_d, C_d> over the D' non-empty blocks. T_d is held fixed.
LossBundle transport_loss(const Matrix& features, const Matrix& prototypes, std::span<const DomainBlock> blocks);

/// -[h(mean_i p_i) - mean_i h(p_i)], gradient with respect to softmax inputs.
LossBundle mi_loss(const Matrix& probs);

/// Mean cross-entropy -Σ y log p; gradient (p - y)/n w.r.t. softmax inputs.
LossBundle cross_entropy_loss(const Matrix& probs, const Matrix& targets);

/// Mean KL(target || p); gradient (p - target)/n w.r.t. softmax inputs.
LossBundle kd_loss(const Matrix& targets, const Matrix& probs);

// ---------------------------------------------------------------------------
// CutMix over generic vectors: a contiguous coordinate block of the partner
// sample replaces the same block of each sample.

struct CutMixBatch {
  Matrix inputs;
  Matrix labels;
  std::vector<std::size_t> partner;
  std::size_t offset = 0;
  std::size_t length = 0;
  double lambda = 1.0;  // exact kept fraction, 1 - length / d
};

CutMixBatch cutmix_apply(const Matrix& batch, const Matrix& labels, std::span<const std::size_t> partner,
                         std::size_t offset, std::size_t length);
/// Draws a partner permutation, λ ~ Beta(α, α) and a block offset.
CutMixBatch cutmix_make(const Matrix& batch, const Matrix& labels, double alpha, Rng& rng);

// ---------------------------------------------------------------------------

struct SmoothingConfig {
  double gamma = 0.1;
  void validate() const;
};

/// (1 - γ) hard + γ/K.
ProbVector smooth_labels(std::span<const double> hard, const SmoothingConfig& cfg);

/// Per-sample soft labels updated as ŷ ← τ ŷ + (1 - τ) G(x).
struct TemporalEnsembleState {
  Matrix labels;  // n_samples x K, indexed by stable sample id
  double tau = 0.6;
  std::size_t iteration = 0;

  static TemporalEnsembleState from_hard_labels(std::span<const std::uint32_t> hard, std::size_t k,
                                                const SmoothingConfig& smoothing, double tau);
};

/// Applies the recurrence to the listed samples and returns their labels
/// (row i corresponds to indices[i]).
Matrix temporal_update(TemporalEnsembleState& state, std::span<const std::size_t> indices, const Matrix& current);
/// Labels for the listed samples without updating them.
Matrix temporal_lookup(const TemporalEnsembleState& state, std::span<const std::size_t> indices);

// ---------------------------------------------------------------------------
// Composition of the per-stage training objectives.

enum class Stage { kSource, kTargetCluster, kTargetRefine };
std::string to_string(Stage s);

struct LossToggles {
  bool transport = true;
  bool mi = true;
  bool cutmix = true;
  bool kd = true;
};

struct LossWeights {
  double transport = 1.0;
  double mi = 1.0;
  double mix = 1.0;
  double kd = 1.0;
};

struct ActiveTerms {
  bool transport = false;
  bool mi = false;
  bool cutmix = false;
  bool kd = false;
};

/// Terms that participate in a stage: source = transport + MI + CutMix;
/// target clustering adds KD; refinement is transport + MI only. Toggles can
/// only remove terms. Throws if nothing remains.
ActiveTerms active_terms(Stage stage, const LossToggles& toggles);

struct ObjectiveInputs {
  const Matrix* batch = nullptr;         // n x input_dim
  std::vector<DomainBlock> blocks;       // transport plans over batch rows
  const CutMixBatch* cutmix = nullptr;   // mixed inputs and labels
  const Matrix* kd_targets = nullptr;    // n x K refined labels
};

struct TermValues {
  std::optional<double> transport;
  std::optional<double> mi;
  std::optional<double> cutmix;
  std::optional<double> kd;
};

struct ObjectiveResult {
  double total = 0.0;
  TermValues terms;  // unweighted values of the active terms
  Gradients grads;   // gradient of the weighted total; empty if not requested
};

/// Weighted sum of the active terms with exact parameter gradients.
ObjectiveResult compose(const ClusterModel& model, Stage stage, const ObjectiveInputs& inputs,
                        const LossToggles& toggles, const LossWeights& weights, bool with_gradients = true);

}  // namespace pcd
