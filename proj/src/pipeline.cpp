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

#include "pcd/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "pcd/errors.hpp"

namespace pcd {
namespace {

using Clock = std::chrono::steady_clock;

std::string fmt_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt_num(*v) : std::string("na"); }

std::string fmt_vec(std::span<const double> v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += fmt_num(v[i]);
  }
  return s;
}

// Per-domain sub-batch sizes proportional to domain sizes (largest remainder).
std::vector<std::size_t> sub_batch_sizes(std::span<const std::size_t> sizes, std::size_t batch) {
  std::size_t total = 0;
  for (auto s : sizes) total += s;
  batch = std::min(batch, total);
  std::vector<std::size_t> out(sizes.size(), 0);
  std::vector<std::pair<double, std::size_t>> rema;
  std::size_t assigned = 0;
  for (std::size_t d = 0; d < sizes.size(); ++d) {
    const double exact = static_cast<double>(batch) * static_cast<double>(sizes[d]) / static_cast<double>(total);
    out[d] = static_cast<std::size_t>(std::floor(exact));
    assigned += out[d];
    rema.emplace_back(exact - std::floor(exact), d);
  }
  std::stable_sort(rema.begin(), rema.end(), [](auto a, auto b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < batch; ++i) {
    const std::size_t d = rema[i % rema.size()].second;
    if (out[d] < sizes[d]) {
      ++out[d];
      ++assigned;
    }
  }
  return out;
}

// Contiguous batches over a permutation; a trailing batch of one sample is
// folded into its predecessor because CutMix needs pairs.
std::vector<std::vector<std::size_t>> single_domain_batches(const std::vector<std::size_t>& perm, std::size_t batch) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < perm.size(); start += batch) {
    const std::size_t end = std::min(perm.size(), start + batch);
    out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start), perm.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (out.size() > 1 && out.back().size() < 2) {
    auto tail = out.back();
    out.pop_back();
    out.back().insert(out.back().end(), tail.begin(), tail.end());
  }
  return out;
}

std::size_t single_domain_steps(std::size_t n, std::size_t batch) {
  std::size_t steps = (n + batch - 1) / batch;
  if (steps > 1 && n % batch == 1) --steps;
  return steps;
}

struct TermAccumulator {
  double transport = 0, mi = 0, cutmix = 0, kd = 0;
  std::size_t steps = 0;
  ActiveTerms active;

  void add(const TermValues& t) {
    transport += t.transport.value_or(0.0);
    mi += t.mi.value_or(0.0);
    cutmix += t.cutmix.value_or(0.0);
    kd += t.kd.value_or(0.0);
    ++steps;
  }
  TermValues mean() const {
    TermValues out;
    const double n = static_cast<double>(std::max<std::size_t>(steps, 1));
    if (active.transport) out.transport = transport / n;
    if (active.mi) out.mi = mi / n;
    if (active.cutmix) out.cutmix = cutmix / n;
    if (active.kd) out.kd = kd / n;
    return out;
  }
};

// Everything one optimisation step needs besides the model.
struct StepContext {
  const TrainConfig* cfg = nullptr;
  Stage stage = Stage::kSource;
  LossToggles toggles;
  ProportionState* proportions = nullptr;
  // Full-dataset OT: one plan per domain, indexed by sample position.
  const std::vector<Matrix>* full_plans = nullptr;
  Rng* mix_rng = nullptr;
};

Matrix solve_block_plan(const TrainConfig& cfg, const Matrix& features, const Matrix& prototypes,
                        std::span<const double> b) {
  const ot::CostMatrix cost = ot::build_cost(features, prototypes);
  const ProbVector u = uniform(features.rows());
  return ot::sinkhorn(cost, u, b, cfg.sinkhorn()).plan;
}

// batch rows belonging to domain d are domain_rows[d]; sample_pos[d] gives
// their positions in the domain's dataset (for full-dataset plans).
TermValues train_step(ClusterModel& model, OptimizerState& opt, const StepContext& ctx, const Matrix& batch,
                      const std::vector<std::vector<std::size_t>>& domain_rows,
                      const std::vector<std::vector<std::size_t>>& sample_pos, const Matrix* kd_targets) {
  const TrainConfig& cfg = *ctx.cfg;
  const Encoded enc = encode(model, batch);
  Matrix logits = head_logits(model.bank, enc.features);
  for (double& v : logits.data()) v /= model.temperature;

  // Proportions first, then transport plans against the updated B_d.
  for (std::size_t d = 0; d < domain_rows.size(); ++d) {
    if (domain_rows[d].empty()) continue;
    const Matrix post = posterior(logits.gather_rows(domain_rows[d]), ctx.proportions->domains[d]);
    ema_update(*ctx.proportions, d, batch_estimate(post));
  }
  advance(*ctx.proportions);

  const ActiveTerms active = active_terms(ctx.stage, ctx.toggles);
  ObjectiveInputs inputs;
  inputs.batch = &batch;
  if (active.transport) {
    for (std::size_t d = 0; d < domain_rows.size(); ++d) {
      if (domain_rows[d].empty()) continue;
      DomainBlock block;
      block.rows = domain_rows[d];
      if (ctx.full_plans != nullptr) {
        const Matrix& full = (*ctx.full_plans)[d];
        block.plan = full.gather_rows(sample_pos[d]);
        const double rescale = static_cast<double>(full.rows()) / static_cast<double>(block.rows.size());
        for (double& t : block.plan.data()) t *= rescale;
      } else {
        block.plan = solve_block_plan(cfg, enc.features.gather_rows(block.rows), model.bank.prototypes,
                                      ctx.proportions->domains[d]);
      }
      inputs.blocks.push_back(std::move(block));
    }
  }
  std::optional<CutMixBatch> mixed;
  if (active.cutmix) {
    const Matrix pseudo = softmax_rows(logits, 1.0);
    mixed = cutmix_make(batch, pseudo, cfg.cutmix_alpha, *ctx.mix_rng);
    inputs.cutmix = &*mixed;
  }
  inputs.kd_targets = kd_targets;

  ObjectiveResult res = compose(model, ctx.stage, inputs, ctx.toggles, cfg.weights, true);
  if (!std::isfinite(res.total)) {
    throw TrainingError("non-finite loss in stage " + to_string(ctx.stage) + " at step " + std::to_string(opt.step));
  }
  sgd_step(model, res.grads, opt, cfg.momentum, cfg.weight_decay);
  return res.terms;
}

std::vector<Matrix> full_dataset_plans(const TrainConfig& cfg, const ClusterModel& model,
                                       const std::vector<const Matrix*>& domains, const ProportionState& props) {
  std::vector<Matrix> plans;
  for (std::size_t d = 0; d < domains.size(); ++d) {
    plans.push_back(solve_block_plan(cfg, encode_features(model, *domains[d]), model.bank.prototypes, props.domains[d]));
  }
  return plans;
}

void check_cancel(const TrainHooks& hooks) {
  if (hooks.cancel != nullptr && hooks.cancel->load()) throw Cancelled();
}

EpochRecord make_record(Stage stage, std::size_t epoch, const TermAccumulator& acc, const ClusterModel& model,
                        const FeatureDataset& data, const ProportionState& props, Clock::time_point start) {
  EpochRecord r;
  r.stage = stage;
  r.epoch = epoch;
  r.losses = acc.mean();
  const Evaluation ev = evaluate(model, data);
  r.accuracy = ev.accuracy;
  r.usage = ev.usage.fractions;
  r.min_usage = ev.usage.min_fraction;
  r.proportions = props.domains;
  r.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return r;
}

void emit(MetricsLog& log, const TrainHooks& hooks, EpochRecord r) {
  if (hooks.on_epoch) hooks.on_epoch(r);
  log.records.push_back(std::move(r));
}

Matrix gather_batch(const FeatureDataset& data, std::span<const std::size_t> rows) {
  return data.features.gather_rows(rows);
}

}  // namespace

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (k < 2) throw std::invalid_argument("config: k must be >= 2");
  if (batch_size < 2) throw std::invalid_argument("config: batch_size must be >= 2 (CutMix needs pairs)");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("config: momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw std::invalid_argument("config: weight_decay must be non-negative");
  if (!(lr > 0.0) || !(lr_encoder > 0.0)) throw std::invalid_argument("config: learning rates must be positive");
  if (weights.transport < 0 || weights.mi < 0 || weights.mix < 0 || weights.kd < 0) {
    throw std::invalid_argument("config: loss coefficients must be non-negative");
  }
  if (!(epsilon > 0.0)) throw std::invalid_argument("config: epsilon must be positive");
  if (!(sinkhorn_tol > 0.0) || sinkhorn_max_iters == 0) throw std::invalid_argument("config: invalid Sinkhorn limits");
  if (!(cutmix_alpha > 0.0)) throw std::invalid_argument("config: cutmix alpha must be positive");
  if (!(tau >= 0.0 && tau < 1.0)) throw std::invalid_argument("config: tau must lie in [0, 1)");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("config: gamma must lie in [0, 1)");
  for (double b : {beta0_source, beta0_target}) {
    if (!(b > 0.0 && b < 1.0)) throw std::invalid_argument("config: beta0 must lie in (0, 1)");
  }
  if (!(beta_min_ratio > 0.0 && beta_min_ratio <= 1.0)) throw std::invalid_argument("config: beta_min_ratio must lie in (0, 1]");
  if (!(temperature > 0.0)) throw std::invalid_argument("config: temperature must be positive");
  if (!identity_encoder && feature_dim == 0) throw std::invalid_argument("config: feature_dim must be >= 1");
}

EncoderSpec TrainConfig::encoder_spec(std::size_t input_dim) const {
  EncoderSpec s;
  s.input_dim = input_dim;
  s.activation = activation;
  s.identity = identity_encoder;
  if (identity_encoder) {
    s.feature_dim = input_dim;
  } else {
    s.hidden_dims = hidden_dims;
    s.feature_dim = feature_dim;
  }
  return s;
}

ot::SinkhornConfig TrainConfig::sinkhorn() const {
  ot::SinkhornConfig c;
  c.epsilon = epsilon;
  c.max_iters = sinkhorn_max_iters;
  c.marginal_tol = sinkhorn_tol;
  return c;
}

double lr_at(double eta0, double progress) {
  const double p = std::clamp(progress, 0.0, 1.0);
  return eta0 * std::pow(1.0 + 10.0 * p, -0.75);
}

OptimizerState OptimizerState::for_model(const ClusterModel& model, double eta0, std::size_t total_steps) {
  OptimizerState s;
  for (const Matrix* m : model.tensors()) {
    s.velocity.emplace_back(m->rows(), m->cols());
    s.eta0.push_back(eta0);
  }
  s.total_steps = std::max<std::size_t>(total_steps, 1);
  return s;
}

double OptimizerState::progress() const {
  return static_cast<double>(step) / static_cast<double>(total_steps);
}

void sgd_step_with_lr(std::vector<Matrix*> params, const Gradients& grads, std::vector<Matrix>& velocity, double lr,
                      double momentum, double weight_decay) {
  if (params.size() != grads.size() || params.size() != velocity.size()) {
    throw std::invalid_argument("sgd_step: tensor count mismatch");
  }
  if (!all_finite(grads)) throw TrainingError("sgd_step: non-finite gradient");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i]->data();
    const auto& g = grads[i].data();
    auto& v = velocity[i].data();
    if (p.size() != g.size() || p.size() != v.size()) throw std::invalid_argument("sgd_step: shape mismatch");
    for (std::size_t j = 0; j < p.size(); ++j) {
      v[j] = momentum * v[j] + g[j] + weight_decay * p[j];
      p[j] -= lr * v[j];
    }
  }
}

void sgd_step(ClusterModel& model, const Gradients& grads, OptimizerState& state, double momentum,
              double weight_decay) {
  auto params = model.tensors();
  if (params.size() != grads.size() || params.size() != state.velocity.size()) {
    throw std::invalid_argument("sgd_step: tensor count mismatch");
  }
  if (!all_finite(grads)) throw TrainingError("sgd_step: non-finite gradient at step " + std::to_string(state.step));
  const double p = state.progress();
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::vector<Matrix*> one{params[i]};
    Gradients g{grads[i]};
    std::vector<Matrix> v{std::move(state.velocity[i])};
    sgd_step_with_lr(one, g, v, lr_at(state.eta0[i], p), momentum, weight_decay);
    state.velocity[i] = std::move(v[0]);
  }
  ++state.step;
  ++model.generation;
}

// ---------------------------------------------------------------------------

std::string MetricsLog::format_record(const EpochRecord& r) {
  std::string s = "stage=" + to_string(r.stage) + " epoch=" + std::to_string(r.epoch);
  s += " loss_transport=" + fmt_opt(r.losses.transport);
  s += " loss_mi=" + fmt_opt(r.losses.mi);
  s += " loss_cutmix=" + fmt_opt(r.losses.cutmix);
  s += " loss_kd=" + fmt_opt(r.losses.kd);
  s += " acc=" + fmt_opt(r.accuracy);
  s += " min_usage=" + fmt_num(r.min_usage);
  s += " usage=" + fmt_vec(r.usage);
  for (std::size_t d = 0; d < r.proportions.size(); ++d) s += " B" + std::to_string(d) + "=" + fmt_vec(r.proportions[d]);
  return s;
}

std::string MetricsLog::to_text() const {
  std::string out;
  for (const auto& r : records) out += format_record(r) + "\n";
  return out;
}

std::string MetricsLog::timing_text() const {
  std::string out;
  for (const auto& r : records) {
    out += "stage=" + to_string(r.stage) + " epoch=" + std::to_string(r.epoch) + " wall_seconds=" + fmt_num(r.wall_seconds) + "\n";
  }
  return out;
}

void MetricsLog::append(const MetricsLog& other) {
  records.insert(records.end(), other.records.begin(), other.records.end());
}

std::vector<std::uint32_t> assign_clusters(const ClusterModel& model, const Matrix& x) {
  const Matrix logits = head_logits(model.bank, encode_features(model, x));
  std::vector<std::uint32_t> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) out[i] = static_cast<std::uint32_t>(argmax(logits.row(i)));
  return out;
}

Evaluation evaluate(const ClusterModel& model, const FeatureDataset& data) {
  Evaluation ev;
  const auto pred = assign_clusters(model, data.features);
  ev.usage = cluster_usage(pred, model.k());
  if (data.labels) ev.accuracy = clustering_accuracy(pred, *data.labels, model.k());
  return ev;
}

// ---------------------------------------------------------------------------

SourceResult train_source(const TrainConfig& cfg, const std::vector<FeatureDataset>& sources_in,
                          const ClusterModel* init, const TrainHooks& hooks) {
  cfg.validate();
  if (sources_in.empty()) throw std::invalid_argument("train_source: no source datasets");
  std::vector<FeatureDataset> pooled;
  const std::vector<FeatureDataset>* sources_ptr = &sources_in;
  if (cfg.pooled_source) {
    pooled.push_back(concatenate(sources_in, 0));
    sources_ptr = &pooled;
  }
  const auto& sources = *sources_ptr;
  const std::size_t input_dim = sources.front().dim();
  std::vector<std::size_t> sizes;
  std::size_t total = 0;
  for (const auto& s : sources) {
    s.validate();
    if (s.dim() != input_dim) throw std::invalid_argument("train_source: source domains differ in width");
    sizes.push_back(s.size());
    total += s.size();
  }
  if (cfg.k > total) throw std::invalid_argument("train_source: K exceeds the number of source samples");

  const Rng root(cfg.seed);
  ClusterModel model = init_model(cfg.encoder_spec(input_dim), cfg.k, root.split(11).next_u64(), cfg.temperature);
  const std::size_t n_encoder_tensors = 2 * model.layers.size();
  if (init != nullptr) {
    if (init->spec != model.spec) throw std::invalid_argument("train_source: pretrained encoder architecture mismatch");
    model.layers = init->layers;
  }

  const auto sub = sub_batch_sizes(sizes, cfg.batch_size);
  std::size_t batch_total = 0;
  for (auto m : sub) batch_total += m;
  const std::size_t steps_per_epoch = (total + batch_total - 1) / batch_total;
  const std::size_t total_steps = steps_per_epoch * cfg.epochs_source;

  OptimizerState opt = OptimizerState::for_model(model, cfg.lr, total_steps);
  if (init != nullptr) {
    for (std::size_t i = 0; i < n_encoder_tensors; ++i) opt.eta0[i] = cfg.lr_encoder;
  }
  SourceResult result;
  result.proportions =
      ProportionState::uniform_prior(sources.size(), cfg.k, cfg.beta0_source, cfg.beta_min_ratio, total_steps);

  Rng stage = root.split(1);
  Rng shuffle_rng = stage.split(1);
  Rng mix_rng = stage.split(2);
  StepContext ctx;
  ctx.cfg = &cfg;
  ctx.stage = Stage::kSource;
  ctx.toggles = cfg.toggles;
  ctx.toggles.kd = false;
  ctx.proportions = &result.proportions;
  ctx.mix_rng = &mix_rng;
  const ActiveTerms active = active_terms(Stage::kSource, ctx.toggles);

  const FeatureDataset all = concatenate(sources, 0);
  std::vector<const Matrix*> domain_features;
  for (const auto& s : sources) domain_features.push_back(&s.features);

  for (std::size_t epoch = 1; epoch <= cfg.epochs_source; ++epoch) {
    const auto start = Clock::now();
    std::vector<std::vector<std::size_t>> perms;
    for (auto n : sizes) perms.push_back(shuffle_rng.permutation(n));
    std::vector<std::size_t> cursor(sources.size(), 0);
    std::vector<Matrix> full_plans;
    if (cfg.ot_scope == OtScope::kFull && active.transport) {
      full_plans = full_dataset_plans(cfg, model, domain_features, result.proportions);
      ctx.full_plans = &full_plans;
    }
    TermAccumulator acc;
    acc.active = active;
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      check_cancel(hooks);
      Matrix batch(batch_total, input_dim);
      std::vector<std::vector<std::size_t>> domain_rows(sources.size()), sample_pos(sources.size());
      std::size_t row = 0;
      for (std::size_t d = 0; d < sources.size(); ++d) {
        for (std::size_t i = 0; i < sub[d]; ++i, ++row) {
          const std::size_t pos = perms[d][cursor[d] % sizes[d]];
          ++cursor[d];
          auto src = sources[d].features.row(pos);
          std::copy(src.begin(), src.end(), batch.row(row).begin());
          domain_rows[d].push_back(row);
          sample_pos[d].push_back(pos);
        }
      }
      acc.add(train_step(model, opt, ctx, batch, domain_rows, sample_pos, nullptr));
    }
    emit(result.log, hooks, make_record(Stage::kSource, epoch, acc, model, all, result.proportions, start));
  }
  result.model = std::move(model);
  return result;
}

TargetResult train_target_cluster(const TrainConfig& cfg, const FeatureDataset& target, LabelOracle* oracle,
                                  const ClusterModel* source_init, const TrainHooks& hooks) {
  cfg.validate();
  target.validate();
  if (target.size() < 2) throw std::invalid_argument("train_target_cluster: need at least 2 target samples");
  const Rng root(cfg.seed);
  TargetResult result;

  ClusterModel model;
  std::optional<TemporalEnsembleState> ensemble;
  if (cfg.model_privacy) {
    if (oracle == nullptr) throw std::invalid_argument("train_target_cluster: an oracle is required");
    model = init_model(cfg.encoder_spec(target.dim()), cfg.k, root.split(12).next_u64(), cfg.temperature);
    const std::uint64_t before = oracle->rows_queried();
    const auto hard = oracle->label(target.features);
    result.oracle_queries = oracle->rows_queried() - before;
    for (auto y : hard) {
      if (y >= cfg.k) throw std::out_of_range("oracle label " + std::to_string(y) + " outside [0, K)");
    }
    ensemble = TemporalEnsembleState::from_hard_labels(hard, cfg.k, SmoothingConfig{cfg.gamma}, cfg.tau);
  } else {
    if (source_init == nullptr) throw std::invalid_argument("train_target_cluster: no source model to initialise from");
    if (source_init->k() != cfg.k || source_init->spec.input_dim != target.dim()) {
      throw std::invalid_argument("train_target_cluster: source model does not fit the target data");
    }
    model = *source_init;
    model.generation = 0;
  }

  const std::size_t steps_per_epoch = single_domain_steps(target.size(), cfg.batch_size);
  const std::size_t total_steps = steps_per_epoch * cfg.epochs_target;
  OptimizerState opt = OptimizerState::for_model(model, cfg.lr, total_steps);
  result.proportions = ProportionState::uniform_prior(1, cfg.k, cfg.beta0_target, cfg.beta_min_ratio, total_steps);

  Rng stage = root.split(2);
  Rng shuffle_rng = stage.split(1);
  Rng mix_rng = stage.split(2);
  StepContext ctx;
  ctx.cfg = &cfg;
  ctx.stage = Stage::kTargetCluster;
  ctx.toggles = cfg.toggles;
  ctx.toggles.kd = cfg.model_privacy;
  ctx.proportions = &result.proportions;
  ctx.mix_rng = &mix_rng;
  const ActiveTerms active = active_terms(Stage::kTargetCluster, ctx.toggles);
  const std::vector<const Matrix*> domain_features{&target.features};

  for (std::size_t epoch = 1; epoch <= cfg.epochs_target; ++epoch) {
    const auto start = Clock::now();
    const auto batches = single_domain_batches(shuffle_rng.permutation(target.size()), cfg.batch_size);
    std::vector<Matrix> full_plans;
    if (cfg.ot_scope == OtScope::kFull && active.transport) {
      full_plans = full_dataset_plans(cfg, model, domain_features, result.proportions);
      ctx.full_plans = &full_plans;
    }
    TermAccumulator acc;
    acc.active = active;
    for (const auto& idx : batches) {
      check_cancel(hooks);
      const Matrix batch = gather_batch(target, idx);
      std::vector<std::vector<std::size_t>> rows(1), pos(1, idx);
      for (std::size_t i = 0; i < idx.size(); ++i) rows[0].push_back(i);
      std::optional<Matrix> kd_targets;
      if (ensemble) {
        if (cfg.temporal_ensemble) {
          kd_targets = temporal_update(*ensemble, idx, predict(model, batch));
        } else {
          kd_targets = temporal_lookup(*ensemble, idx);
        }
      }
      acc.add(train_step(model, opt, ctx, batch, rows, pos, kd_targets ? &*kd_targets : nullptr));
    }
    emit(result.log, hooks, make_record(Stage::kTargetCluster, epoch, acc, model, target, result.proportions, start));
  }
  result.model = std::move(model);
  return result;
}

TargetResult refine_target(const TrainConfig& cfg, const FeatureDataset& target, ClusterModel model,
                           std::optional<ProportionState> proportions, const TrainHooks& hooks) {
  cfg.validate();
  target.validate();
  if (target.size() < 2) throw std::invalid_argument("refine_target: need at least 2 target samples");
  if (model.spec.input_dim != target.dim() || model.k() != cfg.k) {
    throw std::invalid_argument("refine_target: model does not fit the target data");
  }
  const Rng root(cfg.seed);
  TargetResult result;
  const std::size_t steps_per_epoch = single_domain_steps(target.size(), cfg.batch_size);
  const std::size_t total_steps = steps_per_epoch * cfg.epochs_refine;
  model.generation = 0;
  OptimizerState opt = OptimizerState::for_model(model, cfg.lr, total_steps);
  if (proportions) {
    if (proportions->domains.size() != 1 || proportions->k() != cfg.k) {
      throw std::invalid_argument("refine_target: proportions must describe one domain over K clusters");
    }
    result.proportions = *proportions;
    result.proportions.step = 0;
    result.proportions.total_steps = std::max<std::size_t>(total_steps, 1);
  } else {
    result.proportions = ProportionState::uniform_prior(1, cfg.k, cfg.beta0_target, cfg.beta_min_ratio, total_steps);
  }

  Rng stage = root.split(3);
  Rng shuffle_rng = stage.split(1);
  Rng mix_rng = stage.split(2);
  StepContext ctx;
  ctx.cfg = &cfg;
  ctx.stage = Stage::kTargetRefine;
  ctx.toggles = cfg.toggles;
  ctx.toggles.kd = false;
  ctx.proportions = &result.proportions;
  ctx.mix_rng = &mix_rng;
  const ActiveTerms active = active_terms(Stage::kTargetRefine, ctx.toggles);
  const std::vector<const Matrix*> domain_features{&target.features};

  for (std::size_t epoch = 1; epoch <= cfg.epochs_refine; ++epoch) {
    const auto start = Clock::now();
    const auto batches = single_domain_batches(shuffle_rng.permutation(target.size()), cfg.batch_size);
    std::vector<Matrix> full_plans;
    if (cfg.ot_scope == OtScope::kFull && active.transport) {
      full_plans = full_dataset_plans(cfg, model, domain_features, result.proportions);
      ctx.full_plans = &full_plans;
    }
    TermAccumulator acc;
    acc.active = active;
    for (const auto& idx : batches) {
      check_cancel(hooks);
      const Matrix batch = gather_batch(target, idx);
      std::vector<std::vector<std::size_t>> rows(1), pos(1, idx);
      for (std::size_t i = 0; i < idx.size(); ++i) rows[0].push_back(i);
      acc.add(train_step(model, opt, ctx, batch, rows, pos, nullptr));
    }
    emit(result.log, hooks, make_record(Stage::kTargetRefine, epoch, acc, model, target, result.proportions, start));
  }
  result.model = std::move(model);
  return result;
}

// ---------------------------------------------------------------------------

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kFull:
      return "pcd";
    case Variant::kSourceOnly:
      return "so";
    case Variant::kTargetOnly:
      return "to";
    case Variant::kAdaptationOnly:
      return "ao";
  }
  return "unknown";
}

Variant parse_variant(const std::string& s) {
  if (s == "pcd" || s == "full") return Variant::kFull;
  if (s == "so") return Variant::kSourceOnly;
  if (s == "to") return Variant::kTargetOnly;
  if (s == "ao") return Variant::kAdaptationOnly;
  throw std::invalid_argument("unknown variant '" + s + "' (expected pcd, so, to or ao)");
}

PipelineResult run_pipeline(const TrainConfig& cfg, const std::vector<FeatureDataset>& sources,
                            const FeatureDataset& target, Variant variant, LabelOracle* oracle,
                            const TrainHooks& hooks) {
  PipelineResult out;
  if (variant == Variant::kTargetOnly) {
    const Rng root(cfg.seed);
    ClusterModel fresh = init_model(cfg.encoder_spec(target.dim()), cfg.k, root.split(12).next_u64(), cfg.temperature);
    TargetResult refined = refine_target(cfg, target, std::move(fresh), std::nullopt, hooks);
    out.log = std::move(refined.log);
    out.target_proportions = refined.proportions;
    out.final_model = std::move(refined.model);
    out.final_eval = evaluate(out.final_model, target);
    return out;
  }

  SourceResult src = train_source(cfg, sources, nullptr, hooks);
  out.log = src.log;
  out.source = src.model;
  if (variant == Variant::kSourceOnly) {
    out.final_model = src.model;
    out.final_eval = evaluate(out.final_model, target);
    return out;
  }

  std::unique_ptr<LocalOracle> local;
  if (oracle == nullptr && cfg.model_privacy) {
    local = std::make_unique<LocalOracle>(src.model);
    oracle = local.get();
  }
  TargetResult clustered = train_target_cluster(cfg, target, oracle, &src.model, hooks);
  out.log.append(clustered.log);
  out.oracle_queries = clustered.oracle_queries;
  out.adapted = clustered.model;
  out.adapted_eval = evaluate(clustered.model, target);
  if (variant == Variant::kAdaptationOnly) {
    out.target_proportions = clustered.proportions;
    out.final_model = std::move(clustered.model);
    out.final_eval = out.adapted_eval;
    return out;
  }

  TargetResult refined = refine_target(cfg, target, std::move(clustered.model), clustered.proportions, hooks);
  out.log.append(refined.log);
  out.target_proportions = refined.proportions;
  out.final_model = std::move(refined.model);
  out.final_eval = evaluate(out.final_model, target);
  return out;
}

}  // namespace pcd
