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

#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "pcd/losses.hpp"
#include "pcd/ot.hpp"

using namespace pcd;
using doctest::Approx;

namespace {

// Naive versions of the loss values.
double naive_mi(const Matrix& p) {
  const std::size_t n = p.rows(), k = p.cols();
  std::vector<double> mean(k, 0.0);
  double cond = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      mean[j] += p(i, j) / n;
      if (p(i, j) > 0) cond -= p(i, j) * std::log(p(i, j)) / n;
    }
  double marg = 0.0;
  for (double m : mean)
    if (m > 0) marg -= m * std::log(m);
  return -(marg - cond);
}

double naive_cross_entropy(const Matrix& p, const Matrix& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s -= y.data()[i] * std::log(p.data()[i]);
  return s / p.rows();
}

double naive_kl(const Matrix& t, const Matrix& p) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (t.data()[i] > 0) s += t.data()[i] * std::log(t.data()[i] / p.data()[i]);
  return s / p.rows();
}

// FD of a probability-space loss with respect to the softmax inputs.
void check_logit_gradient(const std::function<double(const Matrix&)>& value, const Matrix& analytic, Matrix z) {
  double worst = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    auto f = [&] { return value(softmax_rows(z)); };
    const double fd = testing::central_difference(f, z.data()[i], 1e-6);
    worst = std::max(worst, std::abs(fd - analytic.data()[i]));
  }
  CHECK(worst <= 1e-7);
}

Matrix one_hot_rows(const std::vector<std::size_t>& labels, std::size_t k) {
  Matrix m(labels.size(), k);
  for (std::size_t i = 0; i < labels.size(); ++i) m(i, labels[i]) = 1.0;
  return m;
}

}  // namespace

TEST_SUITE("losses") {
  TEST_CASE("mutual information examples") {
    Matrix flat(6, 4);
    flat.fill(0.25);
    CHECK(std::abs(mi_loss(flat).value) <= 1e-10);
    const Matrix balanced = one_hot_rows({0, 1, 2, 3, 0, 1, 2, 3}, 4);
    CHECK(std::abs(mi_loss(balanced).value + std::log(4.0)) <= 1e-10);
    const Matrix collapsed = one_hot_rows({2, 2, 2}, 4);
    CHECK(std::abs(mi_loss(collapsed).value) <= 1e-10);
    Rng rng(3);
    const Matrix p = testing::random_prob_rows(rng, 9, 5);
    const double v = mi_loss(p).value;
    CHECK(std::abs(v - naive_mi(p)) <= 1e-12);
    CHECK(v <= 1e-12);
    CHECK(v >= -std::log(5.0) - 1e-12);
  }

  TEST_CASE("cross entropy and KD values") {
    Rng rng(4);
    const Matrix p = testing::random_prob_rows(rng, 7, 3);
    const Matrix y = testing::random_prob_rows(rng, 7, 3);
    CHECK(std::abs(cross_entropy_loss(p, y).value - naive_cross_entropy(p, y)) <= 1e-12);
    CHECK(std::abs(kd_loss(y, p).value - naive_kl(y, p)) <= 1e-12);
    CHECK(std::abs(kd_loss(p, p).value) <= 1e-15);
    CHECK(kd_loss(y, p).value >= 0.0);
    CHECK_THROWS_AS(kd_loss(Matrix(0, 3), Matrix(0, 3)), std::invalid_argument);
  }

  TEST_CASE("probability losses: gradients match finite differences") {
    Rng rng(5);
    const Matrix z = testing::random_matrix(rng, 6, 4, 2.0);
    const Matrix y = testing::random_prob_rows(rng, 6, 4);
    const Matrix p = softmax_rows(z);
    check_logit_gradient([](const Matrix& q) { return naive_mi(q); }, mi_loss(p).grad_logits, z);
    check_logit_gradient([&](const Matrix& q) { return naive_cross_entropy(q, y); },
                         cross_entropy_loss(p, y).grad_logits, z);
    check_logit_gradient([&](const Matrix& q) { return naive_kl(y, q); }, kd_loss(y, p).grad_logits, z);
  }

  TEST_CASE("transport loss value and gradient") {
    Rng rng(6);
    Matrix f = testing::random_matrix(rng, 6, 3);
    Matrix mu = testing::random_matrix(rng, 4, 3);
    std::vector<DomainBlock> blocks(3);
    blocks[0].rows = {0, 1, 2};
    blocks[1].rows = {3, 4, 5};
    for (int b = 0; b < 2; ++b) blocks[b].plan = testing::random_prob_rows(rng, 3, 4);
    for (int b = 0; b < 2; ++b)
      for (double& x : blocks[b].plan.data()) x /= 3.0;
    auto value = [&] {
      double s = 0.0;
      for (int b = 0; b < 2; ++b) {
        const Matrix c = ot::build_cost(f.gather_rows(blocks[b].rows), mu).values;
        for (std::size_t i = 0; i < c.size(); ++i) s += c.data()[i] * blocks[b].plan.data()[i];
      }
      return s / 2.0;  // the empty third block is not counted
    };
    const LossBundle t = transport_loss(f, mu, blocks);
    CHECK(std::abs(t.value - value()) <= 1e-12);
    double worst = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i)
      worst = std::max(worst, std::abs(testing::central_difference(value, f.data()[i], 1e-6) - t.grad_features.data()[i]));
    for (std::size_t i = 0; i < mu.size(); ++i)
      worst = std::max(worst, std::abs(testing::central_difference(value, mu.data()[i], 1e-6) -
                                       t.grad_prototypes.data()[i]));
    CHECK(worst <= 1e-7);
    std::vector<DomainBlock> none(1);
    CHECK_THROWS_AS(transport_loss(f, mu, none), std::invalid_argument);
  }

  TEST_CASE("cutmix block replacement") {
    const Matrix x(2, 4, {1, 2, 3, 4, 5, 6, 7, 8});
    const Matrix y(2, 2, {1, 0, 0, 1});
    const std::vector<std::size_t> partner{1, 0};
    const CutMixBatch c = cutmix_apply(x, y, partner, 1, 2);
    CHECK(c.inputs == Matrix(2, 4, {1, 6, 7, 4, 5, 2, 3, 8}));
    CHECK(c.lambda == 0.5);
    CHECK(c.labels == Matrix(2, 2, {0.5, 0.5, 0.5, 0.5}));
    const CutMixBatch none = cutmix_apply(x, y, partner, 0, 0);
    CHECK(none.inputs == x);
    CHECK(none.labels == y);
    CHECK_THROWS_AS(cutmix_apply(x, y, partner, 3, 2), std::invalid_argument);
    CHECK_THROWS_AS(cutmix_apply(Matrix(1, 4), Matrix(1, 2), std::vector<std::size_t>{0}, 0, 1),
                    std::invalid_argument);

    Rng rng(9);
    const Matrix xb = testing::random_matrix(rng, 10, 8);
    const Matrix yb = testing::random_prob_rows(rng, 10, 3);
    Rng a(1), b(1);
    const CutMixBatch m1 = cutmix_make(xb, yb, 0.3, a);
    const CutMixBatch m2 = cutmix_make(xb, yb, 0.3, b);
    CHECK(m1.inputs == m2.inputs);
    CHECK(m1.lambda == Approx(1.0 - double(m1.length) / 8.0));
    for (std::size_t i = 0; i < 10; ++i) CHECK(is_prob_vector(m1.labels.row(i)));
  }

  TEST_CASE("label smoothing and temporal ensembling") {
    const SmoothingConfig s{0.1};
    const ProbVector hard = one_hot(3, 1);
    const ProbVector y = smooth_labels(hard, s);
    CHECK(y[0] == Approx(0.1 / 3.0));
    CHECK(y[1] == Approx(0.9 + 0.1 / 3.0));
    CHECK(smooth_labels(hard, SmoothingConfig{0.0}) == hard);
    CHECK_THROWS_AS(SmoothingConfig{1.0}.validate(), std::invalid_argument);

    const std::vector<std::uint32_t> labels{0, 2};
    TemporalEnsembleState st = TemporalEnsembleState::from_hard_labels(labels, 3, SmoothingConfig{0.0}, 0.6);
    const Matrix current(1, 3, {0.2, 0.3, 0.5});
    const std::vector<std::size_t> idx{1};
    const Matrix out = temporal_update(st, idx, current);
    CHECK(out(0, 0) == Approx(0.4 * 0.2));
    CHECK(out(0, 1) == Approx(0.4 * 0.3));
    CHECK(out(0, 2) == Approx(0.6 + 0.4 * 0.5));
    CHECK(temporal_lookup(st, idx) == out);
    CHECK(st.labels(0, 0) == 1.0);
    const Matrix out2 = temporal_update(st, idx, current);
    CHECK(out2(0, 2) == Approx(0.6 * 0.8 + 0.4 * 0.5));
    CHECK_THROWS_AS(temporal_lookup(st, std::vector<std::size_t>{2}), std::out_of_range);
    CHECK_THROWS_AS(TemporalEnsembleState::from_hard_labels(std::vector<std::uint32_t>{3}, 3, s, 0.6),
                    std::out_of_range);
  }

  TEST_CASE("active terms per stage") {
    const LossToggles all;
    const ActiveTerms src = active_terms(Stage::kSource, all);
    CHECK((src.transport && src.mi && src.cutmix && !src.kd));
    const ActiveTerms tgt = active_terms(Stage::kTargetCluster, all);
    CHECK((tgt.transport && tgt.mi && tgt.cutmix && tgt.kd));
    const ActiveTerms ref = active_terms(Stage::kTargetRefine, all);
    CHECK((ref.transport && ref.mi && !ref.cutmix && !ref.kd));
    LossToggles off{false, false, true, true};
    CHECK_THROWS_AS(active_terms(Stage::kTargetRefine, off), std::invalid_argument);
    CHECK(to_string(Stage::kTargetCluster) == "target_cluster");
  }

  TEST_CASE("composed objective: gradients match finite differences") {
    EncoderSpec spec;
    spec.input_dim = 5;
    spec.hidden_dims = {6};
    spec.feature_dim = 4;
    for (Stage stage : {Stage::kSource, Stage::kTargetCluster, Stage::kTargetRefine}) {
      CAPTURE(to_string(stage));
      ClusterModel m = init_model(spec, 3, 21, 0.5);
      Rng rng(22);
      const Matrix x = testing::random_matrix(rng, 8, 5);
      ObjectiveInputs in;
      in.batch = &x;
      in.blocks.resize(2);
      in.blocks[0].rows = {0, 2, 4, 6};
      in.blocks[1].rows = {1, 3, 5, 7};
      for (auto& b : in.blocks) {
        b.plan = testing::random_prob_rows(rng, 4, 3);
        for (double& v : b.plan.data()) v /= 4.0;
      }
      const std::vector<std::size_t> partner{3, 2, 1, 0, 7, 6, 5, 4};
      const CutMixBatch cm = cutmix_apply(x, testing::random_prob_rows(rng, 8, 3), partner, 1, 3);
      const Matrix kd = testing::random_prob_rows(rng, 8, 3);
      in.cutmix = &cm;
      in.kd_targets = &kd;
      const LossToggles tog;
      const LossWeights w{0.7, 1.3, 0.9, 1.1};
      const ObjectiveResult r = compose(m, stage, in, tog, w);
      const ActiveTerms act = active_terms(stage, tog);
      double expect = 0.0;
      if (act.transport) expect += w.transport * *r.terms.transport;
      if (act.mi) expect += w.mi * *r.terms.mi;
      if (act.cutmix) expect += w.mix * *r.terms.cutmix;
      if (act.kd) expect += w.kd * *r.terms.kd;
      CHECK(r.total == Approx(expect).epsilon(1e-12));
      CHECK(r.terms.kd.has_value() == act.kd);
      CHECK(r.terms.cutmix.has_value() == act.cutmix);
      auto loss = [&] { return compose(m, stage, in, tog, w, false).total; };
      const auto res = testing::check_model_gradients(m, loss, r.grads, 1e-5);
      CHECK(res.checked > 40);
      CHECK(res.worst_relative <= 1e-4);
    }
  }
}
