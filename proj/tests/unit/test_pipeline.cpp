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

#include <atomic>
#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "pcd/errors.hpp"
#include "pcd/pipeline.hpp"

using namespace pcd;
using doctest::Approx;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.k = 3;
  c.batch_size = 16;
  c.epochs_source = 2;
  c.epochs_target = 2;
  c.epochs_refine = 2;
  c.hidden_dims = {8};
  c.feature_dim = 4;
  c.seed = 3;
  return c;
}

SyntheticData tiny_data() {
  SyntheticSpec s;
  s.k = 3;
  s.dim = 6;
  s.source_domains = 2;
  s.samples_per_domain = 40;
  s.target_samples = 33;
  s.seed = 8;
  return generate(s);
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("learning-rate schedule") {
    CHECK(lr_at(0.01, 0.0) == 0.01);
    CHECK(lr_at(0.01, 1.0) == Approx(0.01 * std::pow(11.0, -0.75)).epsilon(1e-15));
    for (double p = 0.0; p <= 1.0; p += 0.125)
      CHECK(lr_at(0.2, p) == Approx(0.2 / std::pow(1.0 + 10.0 * p, 0.75)).epsilon(1e-15));
    CHECK(lr_at(0.01, 2.0) == lr_at(0.01, 1.0));
    CHECK(lr_at(0.01, -1.0) == 0.01);
  }

  TEST_CASE("momentum SGD hand examples") {
    Matrix theta(1, 2, {1.0, -2.0});
    std::vector<Matrix> vel{Matrix(1, 2)};
    const Gradients g{Matrix(1, 2, {0.5, 1.0})};
    sgd_step_with_lr({&theta}, g, vel, 0.1, 0.9, 0.0);
    CHECK(theta(0, 0) == Approx(1.0 - 0.05));
    sgd_step_with_lr({&theta}, g, vel, 0.1, 0.9, 0.0);
    CHECK(theta(0, 0) == Approx(1.0 - 0.1 * 0.5 * 2.9).epsilon(1e-14));
    CHECK(theta(0, 1) == Approx(-2.0 - 0.1 * 1.0 * 2.9).epsilon(1e-14));

    Matrix w(1, 1, {2.0});
    std::vector<Matrix> v{Matrix(1, 1)};
    sgd_step_with_lr({&w}, Gradients{Matrix(1, 1)}, v, 0.5, 0.0, 0.1);
    CHECK(w(0, 0) == Approx(2.0 - 0.5 * 0.2));

    Gradients bad{Matrix(1, 2, {NAN, 0.0})};
    CHECK_THROWS_AS(sgd_step_with_lr({&theta}, bad, vel, 0.1, 0.9, 0.0), TrainingError);
  }

  TEST_CASE("sgd_step applies the decayed rate and bumps the generation") {
    EncoderSpec s;
    s.input_dim = 2;
    s.feature_dim = 2;
    ClusterModel m = init_model(s, 2, 1);
    const ClusterModel before = m;
    OptimizerState st = OptimizerState::for_model(m, 0.1, 2);
    st.step = 1;
    CHECK(st.progress() == 0.5);
    Gradients g = zero_gradients(m);
    g[0].fill(1.0);
    sgd_step(m, g, st, 0.0, 0.0);
    CHECK(m.generation == before.generation + 1);
    CHECK(st.step == 2);
    CHECK(m.layers[0].weight(0, 0) == Approx(before.layers[0].weight(0, 0) - lr_at(0.1, 0.5)).epsilon(1e-14));
    CHECK(m.bank.prototypes == before.bank.prototypes);
  }

  TEST_CASE("metrics record format") {
    EpochRecord r;
    r.stage = Stage::kTargetRefine;
    r.epoch = 3;
    r.losses.transport = 0.25;
    r.losses.mi = -1.0 / 3.0;
    r.accuracy = 0.5;
    r.usage = {0.5, 0.5};
    r.min_usage = 0.5;
    r.proportions = {{0.25, 0.75}};
    r.wall_seconds = 1.5;
    const std::string line = MetricsLog::format_record(r);
    CHECK(line ==
          "stage=target_refine epoch=3 loss_transport=0.25 loss_mi=-0.333333333 loss_cutmix=na loss_kd=na acc=0.5 "
          "min_usage=0.5 usage=0.5,0.5 B0=0.25,0.75");
    MetricsLog log;
    log.records = {r, r};
    CHECK(log.to_text() == line + "\n" + line + "\n");
    CHECK(log.timing_text().find("wall_seconds=1.5") != std::string::npos);
    CHECK(log.to_text().find("wall") == std::string::npos);
  }

  TEST_CASE("config validation and names") {
    TrainConfig c = tiny_config();
    CHECK_NOTHROW(c.validate());
    c.batch_size = 1;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = tiny_config();
    c.tau = 1.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = tiny_config();
    c.temperature = 0.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    for (Variant v : {Variant::kFull, Variant::kSourceOnly, Variant::kTargetOnly, Variant::kAdaptationOnly})
      CHECK(parse_variant(to_string(v)) == v);
    CHECK_THROWS_AS(parse_variant("xx"), std::invalid_argument);
  }

  TEST_CASE("source training produces one record per epoch and valid proportions") {
    const auto data = tiny_data();
    const SourceResult r = train_source(tiny_config(), data.sources);
    REQUIRE(r.log.records.size() == 2);
    CHECK(r.log.records[0].epoch == 1);
    for (const auto& rec : r.log.records) {
      CHECK(rec.stage == Stage::kSource);
      CHECK(rec.losses.transport.has_value());
      CHECK(rec.losses.cutmix.has_value());
      CHECK_FALSE(rec.losses.kd.has_value());
      CHECK(rec.proportions.size() == 2);
      CHECK(rec.accuracy.has_value());
    }
    for (const auto& b : r.proportions.domains) CHECK(is_prob_vector(b));
    for (const Matrix* t : r.model.tensors()) CHECK(t->all_finite());
  }

  TEST_CASE("runs are deterministic for a seed") {
    const auto data = tiny_data();
    const PipelineResult a = run_pipeline(tiny_config(), data.sources, data.target);
    const PipelineResult b = run_pipeline(tiny_config(), data.sources, data.target);
    CHECK(serialize_model(a.final_model) == serialize_model(b.final_model));
    CHECK(a.log.to_text() == b.log.to_text());
    CHECK(a.oracle_queries == data.target.size());
    CHECK(a.log.records.size() == 6);
    TrainConfig other = tiny_config();
    other.seed = 4;
    CHECK(serialize_model(run_pipeline(other, data.sources, data.target).final_model) !=
          serialize_model(a.final_model));
  }

  TEST_CASE("variants select their stages") {
    const auto data = tiny_data();
    const TrainConfig c = tiny_config();
    const PipelineResult so = run_pipeline(c, data.sources, data.target, Variant::kSourceOnly);
    CHECK(so.log.records.size() == 2);
    CHECK(so.oracle_queries == 0);
    const PipelineResult to = run_pipeline(c, data.sources, data.target, Variant::kTargetOnly);
    CHECK(to.log.records.size() == 2);
    CHECK(to.log.records[0].stage == Stage::kTargetRefine);
    CHECK_FALSE(to.source.has_value());
    const PipelineResult ao = run_pipeline(c, data.sources, data.target, Variant::kAdaptationOnly);
    CHECK(ao.log.records.size() == 4);
    CHECK(ao.log.records.back().stage == Stage::kTargetCluster);
    CHECK(ao.oracle_queries == data.target.size());
  }

  TEST_CASE("stage 2 calls the oracle once per target sample") {
    const auto data = tiny_data();
    const SourceResult src = train_source(tiny_config(), data.sources);
    LocalOracle oracle(src.model);
    TrainConfig c = tiny_config();
    c.epochs_target = 3;
    const TargetResult t = train_target_cluster(c, data.target, &oracle);
    CHECK(oracle.rows_queried() == data.target.size());
    CHECK(t.oracle_queries == data.target.size());
    CHECK(t.log.records.back().losses.kd.has_value());
    CHECK_THROWS_AS(train_target_cluster(c, data.target, nullptr), std::invalid_argument);
  }

  TEST_CASE("cancellation stops between batches") {
    const auto data = tiny_data();
    std::atomic<bool> stop{true};
    TrainHooks hooks;
    hooks.cancel = &stop;
    CHECK_THROWS_AS(train_source(tiny_config(), data.sources, nullptr, hooks), Cancelled);
  }

  TEST_CASE("epoch hook sees every record") {
    const auto data = tiny_data();
    std::size_t seen = 0;
    TrainHooks hooks;
    hooks.on_epoch = [&](const EpochRecord&) { ++seen; };
    run_pipeline(tiny_config(), data.sources, data.target, Variant::kFull, nullptr, hooks);
    CHECK(seen == 6);
  }

  TEST_CASE("evaluate reports usage and accuracy") {
    const auto data = tiny_data();
    const SourceResult r = train_source(tiny_config(), data.sources);
    const Evaluation e = evaluate(r.model, data.target);
    REQUIRE(e.accuracy.has_value());
    CHECK(*e.accuracy >= 1.0 / 3.0);
    double s = 0.0;
    for (double f : e.usage.fractions) s += f;
    CHECK(s == Approx(1.0));
    const auto labels = assign_clusters(r.model, data.target.features);
    CHECK(labels.size() == data.target.size());
  }

  TEST_CASE("full-scope transport and pooled sources run") {
    const auto data = tiny_data();
    TrainConfig c = tiny_config();
    c.ot_scope = OtScope::kFull;
    c.pooled_source = true;
    const SourceResult r = train_source(c, data.sources);
    CHECK(r.proportions.domains.size() == 1);
    c.pooled_source = false;
    c.model_privacy = false;
    const PipelineResult p = run_pipeline(c, data.sources, data.target);
    CHECK(p.oracle_queries == 0);
  }
}
