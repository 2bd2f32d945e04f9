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

#include <atomic>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pcd/data.hpp"
#include "pcd/eval.hpp"
#include "pcd/losses.hpp"
#include "pcd/model.hpp"
#include "pcd/oracle.hpp"
#include "pcd/ot.hpp"
#include "pcd/proportions.hpp"

namespace pcd {

enum class OtScope { kBatch, kFull };

struct TrainConfig {
  std::size_t k = 5;
  std::size_t batch_size = 64;
  std::size_t epochs_source = 50;
  std::size_t epochs_target = 50;
  std::size_t epochs_refine = 50;

  // Two learning-rate tiers: `lr` for randomly initialised parameters,
  // `lr_encoder` for encoder layers loaded from a pretrained checkpoint.
  double lr = 0.01;
  double lr_encoder = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.001;

  LossWeights weights;
  LossToggles toggles;        // transport / mi / cutmix; kd is implied by model_privacy
  bool temporal_ensemble = true;
  bool model_privacy = true;  // false: target starts from the source weights, no oracle
  bool pooled_source = false; // merge all source domains into one

  double epsilon = 0.01;
  std::size_t sinkhorn_max_iters = 5000;
  double sinkhorn_tol = 1e-6;
  OtScope ot_scope = OtScope::kBatch;

  double cutmix_alpha = 0.3;
  double tau = 0.6;
  double gamma = 0.1;
  double beta0_source = 0.9999;
  double beta0_target = 0.99;
  double beta_min_ratio = 0.9;

  std::vector<std::size_t> hidden_dims{32};
  std::size_t feature_dim = 16;
  Activation activation = Activation::kRelu;
  bool identity_encoder = false;
  double temperature = 0.1;

  std::uint64_t seed = 0;

  void validate() const;
  EncoderSpec encoder_spec(std::size_t input_dim) const;
  ot::SinkhornConfig sinkhorn() const;
};

// ---------------------------------------------------------------------------

double lr_at(double eta0, double progress);

struct OptimizerState {
  std::vector<Matrix> velocity;
  std::vector<double> eta0;  // per tensor
  std::size_t step = 0;
  std::size_t total_steps = 1;

  static OptimizerState for_model(const ClusterModel& model, double eta0, std::size_t total_steps);
  double progress() const;
};

/// v ← m v + g + wd θ;  θ ← θ - lr v, with lr = lr_at(eta0_i, progress) per
/// tensor. Throws TrainingError on non-finite gradients.
void sgd_step(ClusterModel& model, const Gradients& grads, OptimizerState& state, double momentum,
              double weight_decay);
/// Single step with one explicit learning rate for all tensors.
void sgd_step_with_lr(std::vector<Matrix*> params, const Gradients& grads, std::vector<Matrix>& velocity, double lr,
                      double momentum, double weight_decay);

// ---------------------------------------------------------------------------

struct EpochRecord {
  Stage stage = Stage::kSource;
  std::size_t epoch = 0;
  TermValues losses;               // epoch means of the active terms
  std::optional<double> accuracy;  // only when labels exist
  std::vector<ProbVector> proportions;
  std::vector<double> usage;
  double min_usage = 0.0;
  double wall_seconds = 0.0;
};

/// Append-only per-epoch records. to_text() is deterministic; wall times
/// live in timing_text() so that repeated runs produce identical logs.
struct MetricsLog {
  std::vector<EpochRecord> records;

  std::string to_text() const;
  std::string timing_text() const;
  static std::string format_record(const EpochRecord& r);
  void append(const MetricsLog& other);
};

struct TrainHooks {
  const std::atomic<bool>* cancel = nullptr;
  std::function<void(const EpochRecord&)> on_epoch;
};

class Cancelled : public std::runtime_error {
 public:
  Cancelled() : std::runtime_error("training interrupted") {}
};

struct SourceResult {
  ClusterModel model;
  ProportionState proportions;
  MetricsLog log;
};

struct TargetResult {
  ClusterModel model;
  ProportionState proportions;
  MetricsLog log;
  std::uint64_t oracle_queries = 0;
};

/// Stage 1: per batch, update proportions, solve per-domain OT, then step on
/// transport + MI + CutMix. `init` optionally supplies pretrained encoder
/// layers (trained with lr_encoder).
SourceResult train_source(const TrainConfig& cfg, const std::vector<FeatureDataset>& sources,
                          const ClusterModel* init = nullptr, const TrainHooks& hooks = {});

/// Stage 2: hard labels are fetched from the oracle once per sample, smoothed,
/// and refined by temporal ensembling while training on KD + clustering loss.
/// With model_privacy off, `source_init` seeds the target and no oracle is used.
TargetResult train_target_cluster(const TrainConfig& cfg, const FeatureDataset& target, LabelOracle* oracle,
                                  const ClusterModel* source_init = nullptr, const TrainHooks& hooks = {});

/// Stage 3: transport + MI on target data only. Continues `proportions` when
/// given, otherwise starts from a uniform prior.
TargetResult refine_target(const TrainConfig& cfg, const FeatureDataset& target, ClusterModel model,
                           std::optional<ProportionState> proportions = std::nullopt, const TrainHooks& hooks = {});

// ---------------------------------------------------------------------------

/// Hard cluster assignments argmax_k G(x)_k.
std::vector<std::uint32_t> assign_clusters(const ClusterModel& model, const Matrix& x);

struct Evaluation {
  std::optional<double> accuracy;
  ClusterUsage usage;
};

Evaluation evaluate(const ClusterModel& model, const FeatureDataset& data);

enum class Variant {
  kFull,            // PCD: stages 1, 2, 3
  kSourceOnly,      // SO: stage 1, source model applied to target
  kTargetOnly,      // TO: stage 3 only on a fresh model
  kAdaptationOnly,  // AO: stages 1 and 2
};

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

struct PipelineResult {
  std::optional<ClusterModel> source;
  std::optional<ClusterModel> adapted;  // after stage 2
  ClusterModel final_model;
  std::optional<ProportionState> target_proportions;
  MetricsLog log;
  std::uint64_t oracle_queries = 0;
  Evaluation adapted_eval;
  Evaluation final_eval;
};

/// Runs the stages selected by `variant`. When `oracle` is null the trained
/// source model is wrapped in a LocalOracle.
PipelineResult run_pipeline(const TrainConfig& cfg, const std::vector<FeatureDataset>& sources,
                            const FeatureDataset& target, Variant variant = Variant::kFull,
                            LabelOracle* oracle = nullptr, const TrainHooks& hooks = {});

}  // namespace pcd
