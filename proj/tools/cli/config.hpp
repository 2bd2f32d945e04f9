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

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pcd/pipeline.hpp"

namespace pcd::cli {

/// Raised for anything the user got wrong; maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ConfigKey {
  std::string name;
  std::string help;
};

/// Every recognised training key, in the order config.resolved lists them.
const std::vector<ConfigKey>& config_keys();

/// Sets one key. Throws UsageError on unknown keys or unparsable values.
void apply_setting(TrainConfig& cfg, const std::string& key, const std::string& value);

/// Current value of a key, in the same syntax apply_setting accepts.
std::string get_setting(const TrainConfig& cfg, const std::string& key);

/// Flat `key = value` lines; `#` starts a comment.
std::map<std::string, std::string> parse_config_text(const std::string& text, const std::string& origin);
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);

/// All keys with their resolved values, one `key = value` per line.
std::string render_config(const TrainConfig& cfg);

/// Applies the toggle names used by `ablate`. Throws UsageError on unknown names.
void apply_toggle(TrainConfig& cfg, const std::string& toggle);
const std::vector<std::string>& toggle_names();

}  // namespace pcd::cli
