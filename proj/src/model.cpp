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

#include "pcd/model.hpp"

#include <cmath>

#include "binary_io.hpp"

namespace pcd {
namespace {

constexpr char kCheckpointMagic[4] = {'P', 'C', 'D', 'M'};

Matrix uniform_init(std::size_t rows, std::size_t cols, std::size_t fan_in, Rng rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.uniform(-bound, bound);
  return m;
}

double activate(Activation a, double x) {
  return a == Activation::kRelu ? (x > 0.0 ? x : 0.0) : std::tanh(x);
}

double activate_grad(Activation a, double pre) {
  if (a == Activation::kRelu) return pre > 0.0 ? 1.0 : 0.0;
  const double t = std::tanh(pre);
  return 1.0 - t * t;
}

}  // namespace

std::string to_string(Activation a) { return a == Activation::kRelu ? "relu" : "tanh"; }

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "tanh") return Activation::kTanh;
  throw std::invalid_argument("unknown activation '" + s + "' (expected relu or tanh)");
}

void EncoderSpec::validate() const {
  if (input_dim == 0) throw std::invalid_argument("EncoderSpec: input_dim must be >= 1");
  if (feature_dim == 0) throw std::invalid_argument("EncoderSpec: feature_dim must be >= 1");
  for (std::size_t h : hidden_dims) {
    if (h == 0) throw std::invalid_argument("EncoderSpec: hidden dims must be >= 1");
  }
  if (identity && (!hidden_dims.empty() || feature_dim != input_dim)) {
    throw std::invalid_argument("EncoderSpec: identity encoder needs no hidden layers and feature_dim == input_dim");
  }
}

std::vector<Matrix*> ClusterModel::tensors() {
  std::vector<Matrix*> t;
  for (auto& layer : layers) {
    t.push_back(&layer.weight);
    t.push_back(&layer.bias);
  }
  t.push_back(&bank.prototypes);
  return t;
}

std::vector<const Matrix*> ClusterModel::tensors() const {
  std::vector<const Matrix*> t;
  for (const auto& layer : layers) {
    t.push_back(&layer.weight);
    t.push_back(&layer.bias);
  }
  t.push_back(&bank.prototypes);
  return t;
}

std::size_t ClusterModel::parameter_count() const {
  std::size_t n = 0;
  for (const Matrix* m : tensors()) n += m->size();
  return n;
}

Gradients zero_gradients(const ClusterModel& model) {
  Gradients g;
  for (const Matrix* m : model.tensors()) g.emplace_back(m->rows(), m->cols());
  return g;
}

void add_scaled(Gradients& into, const Gradients& from, double scale) {
  if (into.size() != from.size()) throw std::invalid_argument("add_scaled: gradient count mismatch");
  for (std::size_t i = 0; i < into.size(); ++i) {
    if (into[i].size() != from[i].size()) throw std::invalid_argument("add_scaled: tensor shape mismatch");
    auto& a = into[i].data();
    const auto& b = from[i].data();
    for (std::size_t j = 0; j < a.size(); ++j) a[j] += scale * b[j];
  }
}

bool all_finite(const Gradients& g) {
  for (const auto& m : g) {
    if (!m.all_finite()) return false;
  }
  return true;
}

ClusterModel init_model(const EncoderSpec& spec, std::size_t k, std::uint64_t seed, double temperature) {
  spec.validate();
  if (k < 2) throw std::invalid_argument("init_model: K must be >= 2");
  if (!(temperature > 0.0)) throw std::invalid_argument("init_model: temperature must be positive");
  ClusterModel model;
  model.spec = spec;
  model.temperature = temperature;
  const Rng root(seed);
  if (!spec.identity) {
    std::vector<std::size_t> dims;
    dims.push_back(spec.input_dim);
    dims.insert(dims.end(), spec.hidden_dims.begin(), spec.hidden_dims.end());
    dims.push_back(spec.feature_dim);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      DenseLayer layer;
      layer.weight = uniform_init(dims[l + 1], dims[l], dims[l], root.split(2 * l));
      layer.bias = uniform_init(1, dims[l + 1], dims[l], root.split(2 * l + 1));
      model.layers.push_back(std::move(layer));
    }
  }
  model.bank.prototypes = uniform_init(k, spec.feature_dim, spec.feature_dim, root.split(0xB0B));
  return model;
}

Encoded encode(const ClusterModel& model, const Matrix& batch) {
  if (batch.cols() != model.spec.input_dim) {
    throw std::invalid_argument("encode: batch width " + std::to_string(batch.cols()) + " != input_dim " +
                                std::to_string(model.spec.input_dim));
  }
  Encoded out;
  out.cache.generation = model.generation;
  out.cache.batch_rows = batch.rows();
  Matrix x = batch;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const DenseLayer& layer = model.layers[l];
    Matrix z = matmul_bt(x, layer.weight);
    for (std::size_t i = 0; i < z.rows(); ++i) {
      auto r = z.row(i);
      for (std::size_t j = 0; j < z.cols(); ++j) r[j] += layer.bias(0, j);
    }
    out.cache.layer_inputs.push_back(std::move(x));
    const bool last = l + 1 == model.layers.size();
    if (last) {
      x = z;
    } else {
      x = Matrix(z.rows(), z.cols());
      for (std::size_t i = 0; i < z.size(); ++i) x.data()[i] = activate(model.spec.activation, z.data()[i]);
    }
    out.cache.preactivations.push_back(std::move(z));
  }
  out.features = std::move(x);
  return out;
}

Matrix encode_features(const ClusterModel& model, const Matrix& batch) { return encode(model, batch).features; }

Matrix head_logits(const PrototypeBank& bank, const Matrix& features) {
  if (features.cols() != bank.dim()) {
    throw std::invalid_argument("head_logits: feature width " + std::to_string(features.cols()) +
                                " != prototype width " + std::to_string(bank.dim()));
  }
  return matmul_bt(features, bank.prototypes);
}

Matrix predict_from_features(const ClusterModel& model, const Matrix& features) {
  return softmax_rows(head_logits(model.bank, features), model.temperature);
}

Matrix predict(const ClusterModel& model, const Matrix& batch) {
  return predict_from_features(model, encode_features(model, batch));
}

void head_backward(const PrototypeBank& bank, const Matrix& features, const Matrix& grad_logits, double scale,
                   Matrix& grad_features, Matrix& grad_prototypes) {
  const std::size_t n = features.rows();
  const std::size_t k = bank.k();
  const std::size_t d = bank.dim();
  if (grad_logits.rows() != n || grad_logits.cols() != k || features.cols() != d || grad_features.rows() != n ||
      grad_features.cols() != d || grad_prototypes.rows() != k || grad_prototypes.cols() != d) {
    throw std::invalid_argument("head_backward: shape mismatch");
  }
  for (std::size_t i = 0; i < n; ++i) {
    auto f = features.row(i);
    auto gf = grad_features.row(i);
    for (std::size_t c = 0; c < k; ++c) {
      const double g = grad_logits(i, c) * scale;
      if (g == 0.0) continue;
      auto mu = bank.prototypes.row(c);
      auto gp = grad_prototypes.row(c);
      for (std::size_t t = 0; t < d; ++t) {
        gf[t] += g * mu[t];
        gp[t] += g * f[t];
      }
    }
  }
}

void backward(const ClusterModel& model, const ForwardCache& cache, const Matrix& grad_features,
              const Matrix& grad_prototypes, Gradients& grads) {
  if (cache.generation != model.generation) throw std::logic_error("backward: stale forward cache");
  if (cache.layer_inputs.size() != model.layers.size()) throw std::logic_error("backward: cache/model layer mismatch");
  if (grads.size() != 2 * model.layers.size() + 1) throw std::invalid_argument("backward: gradient count mismatch");
  if (grad_features.rows() != cache.batch_rows || grad_features.cols() != model.spec.feature_dim) {
    throw std::invalid_argument("backward: feature gradient shape mismatch");
  }
  if (grad_prototypes.rows() != model.k() || grad_prototypes.cols() != model.bank.dim()) {
    throw std::invalid_argument("backward: prototype gradient shape mismatch");
  }
  {
    auto& gp = grads.back().data();
    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += grad_prototypes.data()[i];
  }
  Matrix upstream = grad_features;
  for (std::size_t l = model.layers.size(); l-- > 0;) {
    const DenseLayer& layer = model.layers[l];
    const bool last = l + 1 == model.layers.size();
    if (!last) {
      const Matrix& pre = cache.preactivations[l];
      for (std::size_t i = 0; i < upstream.size(); ++i) {
        upstream.data()[i] *= activate_grad(model.spec.activation, pre.data()[i]);
      }
    }
    const Matrix& input = cache.layer_inputs[l];
    const Matrix dw = matmul_at(upstream, input);  // out x in
    auto& gw = grads[2 * l].data();
    for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += dw.data()[i];
    auto gb = grads[2 * l + 1].row(0);
    for (std::size_t i = 0; i < upstream.rows(); ++i) {
      auto r = upstream.row(i);
      for (std::size_t j = 0; j < r.size(); ++j) gb[j] += r[j];
    }
    if (l > 0) upstream = matmul(upstream, layer.weight);
  }
}

Gradients backward(const ClusterModel& model, const ForwardCache& cache, const Matrix& grad_features,
                   const Matrix& grad_prototypes) {
  Gradients g = zero_gradients(model);
  backward(model, cache, grad_features, grad_prototypes, g);
  return g;
}

// ---------------------------------------------------------------------------

std::string serialize_model(const ClusterModel& model) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  const EncoderSpec& s = model.spec;
  w.u32(s.identity ? 1u : 0u);
  w.u32(static_cast<std::uint32_t>(s.input_dim));
  w.u32(static_cast<std::uint32_t>(s.hidden_dims.size()));
  for (std::size_t h : s.hidden_dims) w.u32(static_cast<std::uint32_t>(h));
  w.u32(static_cast<std::uint32_t>(s.feature_dim));
  w.u32(static_cast<std::uint32_t>(s.activation));
  w.u32(static_cast<std::uint32_t>(model.k()));
  w.f64(model.temperature);
  const auto tensors = model.tensors();
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const Matrix* m : tensors) {
    w.u32(static_cast<std::uint32_t>(m->rows()));
    w.u32(static_cast<std::uint32_t>(m->cols()));
    for (double v : m->data()) w.f64(v);
  }
  return w.take();
}

ClusterModel deserialize_model(const std::string& bytes) {
  detail::ByteReader r(bytes, "checkpoint");
  if (r.raw(4) != std::string(kCheckpointMagic, 4)) r.fail("bad magic (expected PCDM)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));
  EncoderSpec spec;
  const std::uint32_t kind = r.u32();
  if (kind > 1) r.fail("unknown encoder kind");
  spec.identity = kind == 1;
  spec.input_dim = r.u32();
  const std::uint32_t n_hidden = r.u32();
  if (n_hidden > 64) r.fail("implausible hidden layer count");
  for (std::uint32_t i = 0; i < n_hidden; ++i) spec.hidden_dims.push_back(r.u32());
  spec.feature_dim = r.u32();
  const std::uint32_t act = r.u32();
  if (act > 1) r.fail("unknown activation code");
  spec.activation = static_cast<Activation>(act);
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    r.fail(e.what());
  }
  const std::uint32_t k = r.u32();
  const double temperature = r.f64();
  if (k < 2 || !(temperature > 0.0)) r.fail("invalid K or temperature");

  ClusterModel model = init_model(spec, k, 0, temperature);
  const auto tensors = model.tensors();
  const std::uint32_t count = r.u32();
  if (count != tensors.size()) r.fail("tensor count does not match architecture");
  for (Matrix* m : tensors) {
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    if (rows != m->rows() || cols != m->cols()) r.fail("tensor shape does not match architecture");
    for (double& v : m->data()) {
      v = r.f64();
      if (!std::isfinite(v)) r.fail("non-finite parameter");
    }
  }
  if (r.remaining() != 0) r.fail("trailing bytes");
  return model;
}

void save_checkpoint(const ClusterModel& model, const std::filesystem::path& path) {
  detail::write_file(path, serialize_model(model));
}

ClusterModel load_checkpoint(const std::filesystem::path& path) {
  return deserialize_model(detail::read_file(path));
}

}  // namespace pcd
