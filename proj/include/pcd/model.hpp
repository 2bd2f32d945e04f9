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
#include <string>
#include <vector>

#include "pcd/numkit.hpp"

namespace pcd {

enum class Activation : std::uint32_t { kRelu = 0, kTanh = 1 };

std::string to_string(Activation a);
Activation parse_activation(const std::string& s);

/// Architecture of the feature encoder. With `identity` set the encoder has
/// no parameters and passes precomputed embeddings through unchanged.
struct EncoderSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
  std::size_t feature_dim = 0;
  Activation activation = Activation::kRelu;
  bool identity = false;

  void validate() const;
  bool operator==(const EncoderSpec&) const = default;
};

struct DenseLayer {
  Matrix weight;  // out x in
  Matrix bias;    // 1 x out
};

/// The linear clustering head: one prototype vector per row.
struct PrototypeBank {
  Matrix prototypes;  // K x d_f

  std::size_t k() const { return prototypes.rows(); }
  std::size_t dim() const { return prototypes.cols(); }
};

struct ClusterModel {
  EncoderSpec spec;
  std::vector<DenseLayer> layers;
  PrototypeBank bank;
  double temperature = 1.0;
  /// Bumped on every parameter update so stale forward caches are detected.
  std::uint64_t generation = 0;

  std::size_t k() const { return bank.k(); }

  /// All trainable tensors: each layer's weight then bias, prototypes last.
  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;
  std::size_t parameter_count() const;
};

/// One gradient tensor per entry of ClusterModel::tensors().
using Gradients = std::vector<Matrix>;

Gradients zero_gradients(const ClusterModel& model);
void add_scaled(Gradients& into, const Gradients& from, double scale);
bool all_finite(const Gradients& g);

struct ForwardCache {
  std::uint64_t generation = 0;
  std::size_t batch_rows = 0;
  std::vector<Matrix> layer_inputs;   // input to layer l
  std::vector<Matrix> preactivations;  // affine output of layer l
};

struct Encoded {
  Matrix features;
  ForwardCache cache;
};

ClusterModel init_model(const EncoderSpec& spec, std::size_t k, std::uint64_t seed,
                        double temperature = 1.0);

Encoded encode(const ClusterModel& model, const Matrix& batch);
Matrix encode_features(const ClusterModel& model, const Matrix& batch);

/// logit_ik = <μ_k, f_i>.
Matrix head_logits(const PrototypeBank& bank, const Matrix& features);

/// Row-wise softmax of head_logits / temperature.
Matrix predict(const ClusterModel& model, const Matrix& batch);
Matrix predict_from_features(const ClusterModel& model, const Matrix& features);

/// Chains dL/dlogits through logits = F μᵀ, accumulating into the feature
/// and prototype gradients. `scale` folds in 1/temperature when the loss
/// gradient is taken with respect to logits / temperature.
void head_backward(const PrototypeBank& bank, const Matrix& features, const Matrix& grad_logits,
                   double scale, Matrix& grad_features, Matrix& grad_prototypes);

/// Backpropagates dL/dfeatures through the encoder and adds everything,
/// including dL/dprototypes, into `grads`.
void backward(const ClusterModel& model, const ForwardCache& cache, const Matrix& grad_features,
              const Matrix& grad_prototypes, Gradients& grads);
Gradients backward(const ClusterModel& model, const ForwardCache& cache, const Matrix& grad_features,
                   const Matrix& grad_prototypes);

// Checkpoints: "PCDM" magic, u32 version, architecture, K, temperature, then
// every tensor as (u32 rows, u32 cols, f64 little-endian data).
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_model(const ClusterModel& model);
ClusterModel deserialize_model(const std::string& bytes);
void save_checkpoint(const ClusterModel& model, const std::filesystem::path& path);
ClusterModel load_checkpoint(const std::filesystem::path& path);

}  // namespace pcd
