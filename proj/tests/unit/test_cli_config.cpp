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

#include "config.hpp"
#include "doctest.h"

using namespace pcd;
using namespace pcd::cli;

TEST_SUITE("cli_config") {
  TEST_CASE("every key round trips through render and parse") {
    TrainConfig c;
    c.lr = 0.1 + 0.2;
    c.hidden_dims = {7, 3};
    c.ot_scope = OtScope::kFull;
    c.activation = Activation::kTanh;
    c.seed = 1234567890123ULL;
    c.toggles.mi = false;
    const std::string text = render_config(c);
    TrainConfig back;
    for (const auto& [k, v] : parse_config_text(text, "mem")) apply_setting(back, k, v);
    CHECK(render_config(back) == text);
    CHECK(back.lr == c.lr);
    CHECK(back.hidden_dims == c.hidden_dims);
    CHECK(back.ot_scope == OtScope::kFull);
    CHECK_FALSE(back.toggles.mi);
    CHECK(parse_config_text(text, "mem").size() == config_keys().size());
  }

  TEST_CASE("parsing values") {
    TrainConfig c;
    apply_setting(c, "epsilon", " 0.05 ");
    CHECK(c.epsilon == 0.05);
    apply_setting(c, "use_cutmix", "off");
    CHECK_FALSE(c.toggles.cutmix);
    apply_setting(c, "hidden_dims", "");
    CHECK(c.hidden_dims.empty());
    CHECK(get_setting(c, "use_cutmix") == "false");
    CHECK_THROWS_AS(apply_setting(c, "nope", "1"), UsageError);
    CHECK_THROWS_AS(apply_setting(c, "k", "-3"), UsageError);
    CHECK_THROWS_AS(apply_setting(c, "k", "2.5"), UsageError);
    CHECK_THROWS_AS(apply_setting(c, "lr", "fast"), UsageError);
    CHECK_THROWS_AS(apply_setting(c, "lr", "inf"), UsageError);
    CHECK_THROWS_AS(apply_setting(c, "use_mi", "maybe"), UsageError);
    CHECK_THROWS_AS(apply_setting(c, "ot_scope", "global"), UsageError);
    CHECK_THROWS_AS(apply_setting(c, "hidden_dims", "4,0"), UsageError);
  }

  TEST_CASE("config text syntax") {
    const auto m = parse_config_text("# header\n k = 4  # trailing\n\nlr=0.5\n", "f.cfg");
    CHECK(m.at("k") == "4");
    CHECK(m.at("lr") == "0.5");
    try {
      parse_config_text("k = 4\nbroken line\n", "f.cfg");
      FAIL("expected a UsageError");
    } catch (const UsageError& e) {
      CHECK(std::string(e.what()).find("f.cfg:2") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_config_text("= 3\n", "x"), UsageError);
    CHECK_THROWS_AS(read_config_file("/nonexistent/pcd.cfg"), UsageError);
  }

  TEST_CASE("ablation toggles") {
    for (const auto& t : toggle_names()) {
      TrainConfig c;
      CHECK_NOTHROW(apply_toggle(c, t));
    }
    TrainConfig c;
    apply_toggle(c, "no-label-smoothing");
    CHECK(c.gamma == 0.0);
    apply_toggle(c, "no-prototype-clustering");
    CHECK_FALSE(c.toggles.transport);
    apply_toggle(c, "no-model-privacy");
    CHECK_FALSE(c.model_privacy);
    CHECK_THROWS_AS(apply_toggle(c, "no-everything"), UsageError);
  }
}
