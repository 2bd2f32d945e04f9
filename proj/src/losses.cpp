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

#include "pcd/losses.hpp"

#include <algorithm>
#include <cmath>

#include "pcd/ot.hpp"

namespace pcd {
namespace {

// p log p with the 0 log 0 = 0 convention, as a log for gradients.
double safe_log(double p) { return std::log(std::max(p, 1e-300)); }

// Chain dL/dp through p = softmax(s): dL/ds_k = p_k (g_k - Σ_j p_j g_j).
Matrix softmax_backward(const Matrix& probs, const Matrix& grad_probs) {
  Matrix out(probs.rows(), probs.cols());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    auto p = probs.row(i);
    auto g = grad_probs.row(i);
    double dot = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) dot += p[k] * g[k];
    auto o = out.row(i);
    for (std::size_t k = 0; k < p.size(); ++k) o[k] = p[k] * (g[k] - dot);
  }
  return out;
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

}  // namespace

LossBundle transport_loss(const Matrix& features, const Matrix& prototypes, std::span<const DomainBlock> blocks) {
  std::size_t non_empty = 0;
  for (const auto& b : blocks) {
    if (!b.rows.empty()) ++non_empty;
  }
  if (non_empty == 0) throw std::invalid_argument("transport_loss: no non-empty domain in batch");

  LossBundle out;
  out.grad_features = Matrix(features.rows(), features.cols());
  out.grad_prototypes = Matrix(prototypes.rows(), prototypes.cols());
  const double scale = 1.0 / static_cast<double>(non_empty);
  for (const auto& b : blocks) {
    if (b.rows.empty()) continue;
    if (b.plan.rows() != b.rows.size() || b.plan.cols() != prototypes.rows()) {
      throw std::invalid_argument("transport_loss: plan shape does not match its block");
    }
    const Matrix f = features.gather_rows(b.rows);
    const ot::CostMatrix cost = ot::build_cost(f, prototypes);
    out.value += scale * ot::transport_cost(b.plan, cost);
    Matrix gf(f.rows(), f.cols());
    ot::cost_gradient(f, prototypes, b.plan, scale, gf, out.grad_prototypes);
    for (std::size_t j = 0; j < b.rows.size(); ++j) {
      auto dst = out.grad_features.row(b.rows[j]);
      auto src = gf.row(j);
      for (std::size_t t = 0; t < src.size(); ++t) dst[t] += src[t];
    }
  }
  return out;
}

LossBundle mi_loss(const Matrix& probs) {
  const std::size_t n = probs.rows();
  if (n == 0) throw std::invalid_argument("mi_loss: empty batch");
  const auto mean = column_mean(probs);
  double conditional = 0.0;
  for (std::size_t i = 0; i < n; ++i) conditional += entropy(probs.row(i));
  conditional /= static_cast<double>(n);

  LossBundle out;
  out.value = -(entropy(mean) - conditional);
  const double inv_n = 1.0 / static_cast<double>(n);
  // dL/dp_ik = (log p̄_k - log p_ik) / n
  Matrix grad_p(n, probs.cols());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < probs.cols(); ++k) grad_p(i, k) = inv_n * (safe_log(mean[k]) - safe_log(probs(i, k)));
  out.grad_logits = softmax_backward(probs, grad_p);
  return out;
}

LossBundle cross_entropy_loss(const Matrix& probs, const Matrix& targets) {
  require_same_shape(probs, targets, "cross_entropy_loss");
  const std::size_t n = probs.rows();
  if (n == 0) throw std::invalid_argument("cross_entropy_loss: empty batch");
  const double inv_n = 1.0 / static_cast<double>(n);
  LossBundle out;
  out.grad_logits = Matrix(n, probs.cols());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < probs.cols(); ++k) {
      const double y = targets(i, k);
      if (y > 0.0) out.value -= inv_n * y * std::log(std::max(probs(i, k), kKlClamp));
      out.grad_logits(i, k) = inv_n * (probs(i, k) - y);
    }
  }
  return out;
}

LossBundle kd_loss(const Matrix& targets, const Matrix& probs) {
  require_same_shape(probs, targets, "kd_loss");
  const std::size_t n = probs.rows();
  if (n == 0) throw std::invalid_argument("kd_loss: empty batch");
  const double inv_n = 1.0 / static_cast<double>(n);
  LossBundle out;
  out.grad_logits = Matrix(n, probs.cols());
  for (std::size_t i = 0; i < n; ++i) {
    out.value += inv_n * kl_div(targets.row(i), probs.row(i));
    for (std::size_t k = 0; k < probs.cols(); ++k) out.grad_logits(i, k) = inv_n * (probs(i, k) - targets(i, k));
  }
  return out;
}

// ---------------------------------------------------------------------------

CutMixBatch cutmix_apply(const Matrix& batch, const Matrix& labels, std::span<const std::size_t> partner,
                         std::size_t offset, std::size_t length) {
  const std::size_t n = batch.rows();
  const std::size_t d = batch.cols();
  if (n < 2) throw std::invalid_argument("cutmix: batch needs at least 2 samples");
  if (labels.rows() != n) throw std::invalid_argument("cutmix: label count mismatch");
  if (partner.size() != n) throw std::invalid_argument("cutmix: partner count mismatch");
  if (offset + length > d) throw std::invalid_argument("cutmix: block exceeds sample width");
  CutMixBatch out;
  out.inputs = batch;
  out.labels = Matrix(n, labels.cols());
  out.partner.assign(partner.begin(), partner.end());
  out.offset = offset;
  out.length = length;
  out.lambda = 1.0 - static_cast<double>(length) / static_cast<double>(d);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = partner[i];
    if (j >= n) throw std::out_of_range("cutmix: partner index out of range");
    auto dst = out.inputs.row(i);
    auto src = batch.row(j);
    std::copy(src.begin() + offset, src.begin() + offset + length, dst.begin() + offset);
    auto y = out.labels.row(i);
    for (std::size_t k = 0; k < labels.cols(); ++k) y[k] = out.lambda * labels(i, k) + (1.0 - out.lambda) * labels(j, k);
  }
  return out;
}

CutMixBatch cutmix_make(const Matrix& batch, const Matrix& labels, double alpha, Rng& rng) {
  if (batch.rows() < 2) throw std::invalid_argument("cutmix: batch needs at least 2 samples");
  const auto partner = rng.permutation(batch.rows());
  const double lambda = sample_beta(alpha, rng);
  const std::size_t d = batch.cols();
  const auto length = static_cast<std::size_t>(std::lround((1.0 - lambda) * static_cast<double>(d)));
  const std::size_t offset = length < d ? rng.below(d - length + 1) : 0;
  return cutmix_apply(batch, labels, partner, offset, std::min(length, d));
}

// ---------------------------------------------------------------------------

void SmoothingConfig::validate() const {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("label smoothing gamma must lie in [0, 1)");
}

ProbVector smooth_labels(std::span<const double> hard, const SmoothingConfig& cfg) {
  cfg.validate();
  require_prob_vector(hard, "smooth_labels");
  const double k = static_cast<double>(hard.size());
  ProbVector out(hard.size());
  for (std::size_t i = 0; i < hard.size(); ++i) out[i] = (1.0 - cfg.gamma) * hard[i] + cfg.gamma / k;
  return out;
}

TemporalEnsembleState TemporalEnsembleState::from_hard_labels(std::span<const std::uint32_t> hard, std::size_t k,
                                                              const SmoothingConfig& smoothing, double tau) {
  if (!(tau >= 0.0 && tau < 1.0)) throw std::invalid_argument("temporal ensemble tau must lie in [0, 1)");
  TemporalEnsembleState s;
  s.tau = tau;
  s.labels = Matrix(hard.size(), k);
  for (std::size_t i = 0; i < hard.size(); ++i) {
    if (hard[i] >= k) throw std::out_of_range("temporal ensemble: label " + std::to_string(hard[i]) + " outside [0, K)");
    const ProbVector y = smooth_labels(one_hot(k, hard[i]), smoothing);
    std::copy(y.begin(), y.end(), s.labels.row(i).begin());
  }
  return s;
}

Matrix temporal_update(TemporalEnsembleState& state, std::span<const std::size_t> indices, const Matrix& current) {
  if (current.rows() != indices.size() || current.cols() != state.labels.cols()) {
    throw std::invalid_argument("temporal_update: prediction shape mismatch");
  }
  Matrix out(indices.size(), state.labels.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= state.labels.rows()) throw std::out_of_range("temporal_update: unknown sample index");
    auto y = state.labels.row(indices[i]);
    auto g = current.row(i);
    auto o = out.row(i);
    for (std::size_t k = 0; k < y.size(); ++k) {
      y[k] = state.tau * y[k] + (1.0 - state.tau) * g[k];
      o[k] = y[k];
    }
  }
  ++state.iteration;
  return out;
}

Matrix temporal_lookup(const TemporalEnsembleState& state, std::span<const std::size_t> indices) {
  for (std::size_t i : indices) {
    if (i >= state.labels.rows()) throw std::out_of_range("temporal_lookup: unknown sample index");
  }
  return state.labels.gather_rows(indices);
}

// ---------------------------------------------------------------------------

std::string to_string(Stage s) {
  switch (s) {
    case Stage::kSource:
      return "source";
    case Stage::kTargetCluster:
      return "target_cluster";
    case Stage::kTargetRefine:
      return "target_refine";
  }
  return "unknown";
}

ActiveTerms active_terms(Stage stage, const LossToggles& toggles) {
  ActiveTerms t;
  t.transport = toggles.transport;
  t.mi = toggles.mi;
  t.cutmix = toggles.cutmix && stage != Stage::kTargetRefine;
  t.kd = toggles.kd && stage == Stage::kTargetCluster;
  if (!t.transport && !t.mi && !t.cutmix && !t.kd) {
    throw std::invalid_argument("compose: every loss term is disabled for stage " + to_string(stage));
  }
  return t;
}

ObjectiveResult compose(const ClusterModel& model, Stage stage, const ObjectiveInputs& inputs,
                        const LossToggles& toggles, const LossWeights& weights, bool with_gradients) {
  if (inputs.batch == nullptr) throw std::invalid_argument("compose: missing batch");
  const ActiveTerms active = active_terms(stage, toggles);
  ObjectiveResult result;
  if (with_gradients) result.grads = zero_gradients(model);

  const double inv_t = 1.0 / model.temperature;
  const Encoded enc = encode(model, *inputs.batch);
  const Matrix& features = enc.features;
  const std::size_t n = features.rows();
  Matrix grad_features(n, features.cols());
  Matrix grad_prototypes(model.k(), model.bank.dim());

  const bool need_probs = active.mi || active.kd;
  Matrix probs;
  if (need_probs) probs = predict_from_features(model, features);
  Matrix grad_logits(n, model.k());
  bool use_logit_grad = false;

  auto add_logits = [&](const Matrix& g, double w) {
    for (std::size_t i = 0; i < g.size(); ++i) grad_logits.data()[i] += w * g.data()[i];
    use_logit_grad = true;
  };

  if (active.transport) {
    const LossBundle t = transport_loss(features, model.bank.prototypes, inputs.blocks);
    result.terms.transport = t.value;
    result.total += weights.transport * t.value;
    if (with_gradients) {
      for (std::size_t i = 0; i < grad_features.size(); ++i)
        grad_features.data()[i] += weights.transport * t.grad_features.data()[i];
      for (std::size_t i = 0; i < grad_prototypes.size(); ++i)
        grad_prototypes.data()[i] += weights.transport * t.grad_prototypes.data()[i];
    }
  }
  if (active.mi) {
    const LossBundle m = mi_loss(probs);
    result.terms.mi = m.value;
    result.total += weights.mi * m.value;
    if (with_gradients) add_logits(m.grad_logits, weights.mi);
  }
  if (active.kd) {
    if (inputs.kd_targets == nullptr) throw std::invalid_argument("compose: KD term needs refined labels");
    const LossBundle k = kd_loss(*inputs.kd_targets, probs);
    result.terms.kd = k.value;
    result.total += weights.kd * k.value;
    if (with_gradients) add_logits(k.grad_logits, weights.kd);
  }
  if (with_gradients) {
    if (use_logit_grad) head_backward(model.bank, features, grad_logits, inv_t, grad_features, grad_prototypes);
    backward(model, enc.cache, grad_features, grad_prototypes, result.grads);
  }

  if (active.cutmix) {
    if (inputs.cutmix == nullptr) throw std::invalid_argument("compose: CutMix term needs a mixed batch");
    const Encoded mixed = encode(model, inputs.cutmix->inputs);
    const Matrix mixed_probs = predict_from_features(model, mixed.features);
    const LossBundle c = cross_entropy_loss(mixed_probs, inputs.cutmix->labels);
    result.terms.cutmix = c.value;
    result.total += weights.mix * c.value;
    if (with_gradients) {
      Matrix gf(mixed.features.rows(), mixed.features.cols());
      Matrix gp(model.k(), model.bank.dim());
      head_backward(model.bank, mixed.features, c.grad_logits, weights.mix * inv_t, gf, gp);
      backward(model, mixed.cache, gf, gp, result.grads);
    }
  }
  return result;
}

}  // namespace pcd
