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

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace pcd::cli {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& expected) {
  throw UsageError("invalid value '" + value + "' for " + key + " (expected " + expected + ")");
}

std::size_t parse_count(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto* end = v.data() + v.size();
  const auto res = std::from_chars(v.data(), end, out);
  if (v.empty() || res.ec != std::errc() || res.ptr != end) bad_value(key, v, "a non-negative integer");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto res = std::from_chars(v.data(), end, out);
  if (v.empty() || res.ec != std::errc() || res.ptr != end) bad_value(key, v, "a non-negative integer");
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used == v.size() && std::isfinite(out)) return out;
  } catch (const std::exception&) {
  }
  bad_value(key, v, "a finite real number");
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  bad_value(key, v, "true or false");
}

std::string real_text(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

struct Field {
  ConfigKey key;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

template <class T>
Field count_field(std::string name, std::string help, T TrainConfig::*member) {
  return {{name, std::move(help)},
          [name, member](TrainConfig& c, const std::string& v) { c.*member = static_cast<T>(parse_count(name, v)); },
          [member](const TrainConfig& c) { return std::to_string(c.*member); }};
}

Field real_field(std::string name, std::string help, std::function<double&(TrainConfig&)> ref) {
  return {{name, std::move(help)},
          [name, ref](TrainConfig& c, const std::string& v) { ref(c) = parse_real(name, v); },
          [ref](const TrainConfig& c) { return real_text(ref(const_cast<TrainConfig&>(c))); }};
}

Field bool_field(std::string name, std::string help, std::function<bool&(TrainConfig&)> ref) {
  return {{name, std::move(help)},
          [name, ref](TrainConfig& c, const std::string& v) { ref(c) = parse_bool(name, v); },
          [ref](const TrainConfig& c) { return bool_text(ref(const_cast<TrainConfig&>(c))); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
    f.push_back(count_field("k", "number of clusters K (default 5)", &TrainConfig::k));
    f.push_back(count_field("batch_size", "mini-batch size (default 64)", &TrainConfig::batch_size));
    f.push_back(count_field("epochs_source", "source clustering epochs (default 50)", &TrainConfig::epochs_source));
    f.push_back(count_field("epochs_target", "target clustering epochs (default 50)", &TrainConfig::epochs_target));
    f.push_back(count_field("epochs_refine", "target refinement epochs (default 50)", &TrainConfig::epochs_refine));
    f.push_back(real_field("lr", "learning rate for random-init parameters (default 0.01)",
                           [](TrainConfig& c) -> double& { return c.lr; }));
    f.push_back(real_field("lr_encoder", "learning rate for pretrained encoder layers (default 0.001)",
                           [](TrainConfig& c) -> double& { return c.lr_encoder; }));
    f.push_back(real_field("momentum", "SGD momentum (default 0.9)", [](TrainConfig& c) -> double& { return c.momentum; }));
    f.push_back(real_field("weight_decay", "weight decay (default 0.001)",
                           [](TrainConfig& c) -> double& { return c.weight_decay; }));
    f.push_back(real_field("lambda_transport", "transport loss coefficient (default 1)",
                           [](TrainConfig& c) -> double& { return c.weights.transport; }));
    f.push_back(real_field("lambda_mi", "mutual-information loss coefficient (default 1)",
                           [](TrainConfig& c) -> double& { return c.weights.mi; }));
    f.push_back(real_field("lambda_mix", "CutMix loss coefficient (default 1)",
                           [](TrainConfig& c) -> double& { return c.weights.mix; }));
    f.push_back(real_field("lambda_kd", "distillation loss coefficient (default 1)",
                           [](TrainConfig& c) -> double& { return c.weights.kd; }));
    f.push_back(bool_field("use_transport", "enable the prototype transport loss (default true)",
                           [](TrainConfig& c) -> bool& { return c.toggles.transport; }));
    f.push_back(bool_field("use_mi", "enable the mutual-information loss (default true)",
                           [](TrainConfig& c) -> bool& { return c.toggles.mi; }));
    f.push_back(bool_field("use_cutmix", "enable the CutMix loss (default true)",
                           [](TrainConfig& c) -> bool& { return c.toggles.cutmix; }));
    f.push_back(bool_field("temporal_ensemble", "refine oracle labels by temporal ensembling (default true)",
                           [](TrainConfig& c) -> bool& { return c.temporal_ensemble; }));
    f.push_back(bool_field("model_privacy", "train the target through the label oracle (default true)",
                           [](TrainConfig& c) -> bool& { return c.model_privacy; }));
    f.push_back(bool_field("pooled_source", "merge all source domains into one (default false)",
                           [](TrainConfig& c) -> bool& { return c.pooled_source; }));
    f.push_back(real_field("epsilon", "entropic regularisation of the transport problem (default 0.01)",
                           [](TrainConfig& c) -> double& { return c.epsilon; }));
    f.push_back(count_field("sinkhorn_max_iters", "Sinkhorn iteration cap (default 5000)",
                            &TrainConfig::sinkhorn_max_iters));
    f.push_back(real_field("sinkhorn_tol", "Sinkhorn marginal tolerance (default 1e-6)",
                           [](TrainConfig& c) -> double& { return c.sinkhorn_tol; }));
    f.push_back({{"ot_scope", "transport plans per mini-batch or per full domain: batch|full (default batch)"},
                 [](TrainConfig& c, const std::string& v) {
                   if (v == "batch") c.ot_scope = OtScope::kBatch;
                   else if (v == "full") c.ot_scope = OtScope::kFull;
                   else bad_value("ot_scope", v, "batch or full");
                 },
                 [](const TrainConfig& c) { return std::string(c.ot_scope == OtScope::kBatch ? "batch" : "full"); }});
    f.push_back(real_field("cutmix_alpha", "Beta(alpha, alpha) parameter for CutMix (default 0.3)",
                           [](TrainConfig& c) -> double& { return c.cutmix_alpha; }));
    f.push_back(real_field("tau", "temporal ensemble momentum (default 0.6)", [](TrainConfig& c) -> double& { return c.tau; }));
    f.push_back(real_field("gamma", "label smoothing weight (default 0.1)", [](TrainConfig& c) -> double& { return c.gamma; }));
    f.push_back(real_field("beta0_source", "initial proportion EMA weight, source (default 0.9999)",
                           [](TrainConfig& c) -> double& { return c.beta0_source; }));
    f.push_back(real_field("beta0_target", "initial proportion EMA weight, target (default 0.99)",
                           [](TrainConfig& c) -> double& { return c.beta0_target; }));
    f.push_back(real_field("beta_min_ratio", "final EMA weight as a fraction of beta0 (default 0.9)",
                           [](TrainConfig& c) -> double& { return c.beta_min_ratio; }));
    f.push_back({{"hidden_dims", "comma-separated encoder hidden widths, may be empty (default 32)"},
                 [](TrainConfig& c, const std::string& v) {
                   std::vector<std::size_t> dims;
                   std::stringstream ss(v);
                   std::string item;
                   while (std::getline(ss, item, ',')) {
                     item = trim(item);
                     if (item.empty()) continue;
                     const std::size_t d = parse_count("hidden_dims", item);
                     if (d == 0) bad_value("hidden_dims", v, "positive widths");
                     dims.push_back(d);
                   }
                   c.hidden_dims = std::move(dims);
                 },
                 [](const TrainConfig& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.hidden_dims.size(); ++i) s += (i ? "," : "") + std::to_string(c.hidden_dims[i]);
                   return s;
                 }});
    f.push_back(count_field("feature_dim", "encoder output width (default 16)", &TrainConfig::feature_dim));
    f.push_back({{"activation", "hidden activation: relu|tanh (default relu)"},
                 [](TrainConfig& c, const std::string& v) {
                   try {
                     c.activation = parse_activation(v);
                   } catch (const std::exception&) {
                     bad_value("activation", v, "relu or tanh");
                   }
                 },
                 [](const TrainConfig& c) { return to_string(c.activation); }});
    f.push_back(bool_field("identity_encoder", "use the identity map as encoder (default false)",
                           [](TrainConfig& c) -> bool& { return c.identity_encoder; }));
    f.push_back(real_field("temperature", "softmax temperature of the cluster head (default 0.1)",
                           [](TrainConfig& c) -> double& { return c.temperature; }));
    f.push_back({{"seed", "master random seed (default 0)"},
                 [](TrainConfig& c, const std::string& v) { c.seed = parse_u64("seed", v); },
                 [](const TrainConfig& c) { return std::to_string(c.seed); }});
    return f;
  }();
  return all;
}

const Field& find_field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key.name == key) return f;
  }
  throw UsageError("unknown config key '" + key + "'");
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const auto& f : fields()) out.push_back(f.key);
    return out;
  }();
  return keys;
}

void apply_setting(TrainConfig& cfg, const std::string& key, const std::string& value) {
  find_field(key).set(cfg, trim(value));
}

std::string get_setting(const TrainConfig& cfg, const std::string& key) { return find_field(key).get(cfg); }

std::map<std::string, std::string> parse_config_text(const std::string& text, const std::string& origin) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw UsageError(origin + ":" + std::to_string(lineno) + ": empty key");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

std::map<std::string, std::string> read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

std::string render_config(const TrainConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += f.key.name + " = " + f.get(cfg) + "\n";
  return out;
}

const std::vector<std::string>& toggle_names() {
  static const std::vector<std::string> names{"full",         "no-prototype-clustering", "no-mi",
                                              "no-cutmix",    "no-temporal-ensemble",    "no-label-smoothing",
                                              "no-model-privacy", "pooled-source"};
  return names;
}

void apply_toggle(TrainConfig& cfg, const std::string& toggle) {
  if (toggle == "full") return;
  if (toggle == "no-prototype-clustering") cfg.toggles.transport = false;
  else if (toggle == "no-mi") cfg.toggles.mi = false;
  else if (toggle == "no-cutmix") cfg.toggles.cutmix = false;
  else if (toggle == "no-temporal-ensemble") cfg.temporal_ensemble = false;
  else if (toggle == "no-label-smoothing") cfg.gamma = 0.0;
  else if (toggle == "no-model-privacy") cfg.model_privacy = false;
  else if (toggle == "pooled-source") cfg.pooled_source = true;
  else throw UsageError("unknown toggle '" + toggle + "'");
}

}  // namespace pcd::cli
