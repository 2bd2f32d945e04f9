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

#include "commands.hpp"

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "config.hpp"
#include "pcd/errors.hpp"
#include "pcd/pipeline.hpp"

namespace pcd::cli {
namespace {

namespace fs = std::filesystem;

std::atomic<bool> g_interrupted{false};

extern "C" void on_signal(int) { g_interrupted.store(true); }

struct SignalScope {
  using Handler = void (*)(int);
  Handler old_int;
  Handler old_term;
  SignalScope() {
    g_interrupted.store(false);
    old_int = std::signal(SIGINT, on_signal);
    old_term = std::signal(SIGTERM, on_signal);
  }
  ~SignalScope() {
    std::signal(SIGINT, old_int);
    std::signal(SIGTERM, old_term);
  }
};

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : std::string("na"); }

std::string join(std::span<const double> v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
  return s;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

// --- training options shared by several subcommands -------------------------

struct TrainingOptions {
  std::string config_file;
  std::map<std::string, std::string> overrides;
};

void add_training_options(CLI::App* sub, TrainingOptions& opts) {
  sub->add_option("--config", opts.config_file, "flat 'key = value' config file; flags override it");
  for (const auto& key : config_keys()) {
    sub->add_option_function<std::string>(
        "--" + key.name, [&opts, name = key.name](const std::string& v) { opts.overrides[name] = v; }, key.help);
  }
}

TrainConfig resolve(const TrainingOptions& opts) {
  TrainConfig cfg;
  if (!opts.config_file.empty()) {
    for (const auto& [k, v] : read_config_file(opts.config_file)) apply_setting(cfg, k, v);
  }
  for (const auto& [k, v] : opts.overrides) apply_setting(cfg, k, v);
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

// --- data loading --------------------------------------------------------------

std::optional<fs::path> find_with_ext(const fs::path& dir, const std::string& stem) {
  for (const char* ext : {".pcdd", ".csv"}) {
    const fs::path p = dir / (stem + ext);
    if (fs::exists(p)) return p;
  }
  return std::nullopt;
}

std::vector<FeatureDataset> load_sources(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw UsageError("--data must be a directory holding source_<d>.pcdd files: " + dir.string());
  std::vector<FeatureDataset> out;
  for (std::uint32_t d = 0;; ++d) {
    const auto p = find_with_ext(dir, "source_" + std::to_string(d));
    if (!p) break;
    out.push_back(load_features(*p, d));
  }
  if (out.empty()) throw UsageError("no source_0.pcdd or source_0.csv in " + dir.string());
  return out;
}

FeatureDataset load_target(const fs::path& path) {
  if (fs::is_directory(path)) {
    const auto p = find_with_ext(path, "target");
    if (!p) throw UsageError("no target.pcdd or target.csv in " + path.string());
    return load_features(*p, 0);
  }
  if (!fs::exists(path)) throw UsageError("data file not found: " + path.string());
  return load_features(path, 0);
}

// --- run directory -------------------------------------------------------------

class RunDirectory {
 public:
  RunDirectory(const fs::path& dir, const TrainConfig& cfg, const std::string& header) : dir_(dir) {
    fs::create_directories(dir_);
    write_text(dir_ / "config.resolved", header + render_config(cfg));
    metrics_.open(dir_ / "metrics.log", std::ios::binary | std::ios::trunc);
    timing_.open(dir_ / "timing.log", std::ios::binary | std::ios::trunc);
    if (!metrics_ || !timing_) throw std::runtime_error("cannot create logs in " + dir_.string());
  }

  void record(const EpochRecord& r) {
    metrics_ << MetricsLog::format_record(r) << '\n';
    metrics_.flush();
    MetricsLog one;
    one.records.push_back(r);
    timing_ << one.timing_text();
    timing_.flush();
  }

  TrainHooks hooks(const std::atomic<bool>* cancel) {
    TrainHooks h;
    h.cancel = cancel;
    h.on_epoch = [this](const EpochRecord& r) { record(r); };
    return h;
  }

  const fs::path& path() const { return dir_; }

 private:
  fs::path dir_;
  std::ofstream metrics_;
  std::ofstream timing_;
};

std::string eval_record(const std::string& label, const ClusterModel& model, const FeatureDataset& data) {
  const Evaluation ev = evaluate(model, data);
  return label + " n=" + std::to_string(data.size()) + " k=" + std::to_string(model.k()) + " acc=" +
         fmt_opt(ev.accuracy) + " min_usage=" + fmt(ev.usage.min_fraction) + " usage=" + join(ev.usage.fractions);
}

// --- subcommands ---------------------------------------------------------------

struct GenDataArgs {
  std::string spec = "default";
  std::string out;
  std::string format = "pcdd";
  std::uint64_t seed = 0;
  std::size_t k = 5;
  std::size_t dim = 20;
  std::size_t domains = 3;
  std::size_t samples = 500;
  std::size_t target_samples = 500;
  double noise = 0.5;
  double target_noise = 1.0;
  double rotation = 0.1;
  double translation = 0.5;
  double drop = 0.7;
};

int cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
  if (a.spec != "default" && a.spec != "imbalanced") throw UsageError("--spec must be default or imbalanced");
  if (a.format != "pcdd" && a.format != "csv") throw UsageError("--format must be pcdd or csv");
  SyntheticSpec s;
  s.k = a.k;
  s.dim = a.dim;
  s.source_domains = a.domains;
  s.samples_per_domain = a.samples;
  s.target_samples = a.target_samples;
  s.noise = a.noise;
  s.target_noise = a.target_noise;
  s.rotation_scale = a.rotation;
  s.translation_scale = a.translation;
  s.seed = a.seed;
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  SyntheticData data = generate(s);
  if (a.spec == "imbalanced") data.target = subsample_imbalanced(data.target, s.k, a.drop, a.seed ^ 0x1ab5u);

  const fs::path dir(a.out);
  fs::create_directories(dir);
  auto save = [&](const FeatureDataset& d, const std::string& stem) {
    if (a.format == "csv") {
      write_text(dir / (stem + ".csv"), to_csv(d));
    } else {
      save_dataset(d, dir / (stem + ".pcdd"));
    }
  };
  for (std::size_t d = 0; d < data.sources.size(); ++d) save(data.sources[d], "source_" + std::to_string(d));
  save(data.target, "target");

  std::ostringstream manifest;
  manifest << "spec = " << a.spec << "\nseed = " << a.seed << "\nk = " << a.k << "\ndim = " << a.dim
           << "\ndomains = " << a.domains << "\nsamples = " << a.samples << "\ntarget_samples = " << a.target_samples
           << "\nnoise = " << fmt(a.noise) << "\ntarget_noise = " << fmt(a.target_noise)
           << "\nrotation = " << fmt(a.rotation) << "\ntranslation = " << fmt(a.translation);
  if (a.spec == "imbalanced") manifest << "\ndrop = " << fmt(a.drop);
  manifest << "\ntarget_proportions = " << join(label_proportions(data.target, s.k)) << "\n";
  write_text(dir / "data.resolved", manifest.str());
  out << "wrote " << data.sources.size() << " source domains and a target of " << data.target.size() << " samples to "
      << dir.string() << "\n";
  return 0;
}

int cmd_train_source(const std::string& data_dir, const std::string& out_dir, const std::string& init_path,
                     const TrainingOptions& opts, std::ostream& out) {
  const TrainConfig cfg = resolve(opts);
  const auto sources = load_sources(data_dir);
  std::optional<ClusterModel> init;
  if (!init_path.empty()) init = load_checkpoint(init_path);
  RunDirectory run(out_dir, cfg, "# train-source\n# data = " + data_dir + "\n" +
                                     (init_path.empty() ? "" : "# init = " + init_path + "\n"));
  SignalScope signals;
  const SourceResult res = train_source(cfg, sources, init ? &*init : nullptr, run.hooks(&g_interrupted));
  save_checkpoint(res.model, run.path() / "source.ckpt");
  out << "wrote " << (run.path() / "source.ckpt").string() << "\n";
  return 0;
}

int cmd_serve(const std::string& model_path, const std::string& addr, std::ostream& out) {
  const Endpoint ep = Endpoint::parse(addr);
  auto model = std::make_shared<const ClusterModel>(load_checkpoint(model_path));
  OracleServer server(model, ep);
  SignalScope signals;
  server.start();
  out << "listening on " << ep.host << ":" << server.port() << std::endl;
  while (!g_interrupted.load()) std::this_thread::sleep_for(std::chrono::milliseconds(50));
  server.stop();
  out << "stopped after " << server.requests_served() << " requests" << std::endl;
  return 0;
}

int cmd_train_target(const std::string& data_path, const std::string& oracle_spec, const std::string& source_path,
                     const std::string& out_dir, const TrainingOptions& opts, std::ostream& out) {
  const TrainConfig cfg = resolve(opts);
  const FeatureDataset target = load_target(data_path);
  std::unique_ptr<LabelOracle> oracle;
  std::optional<ClusterModel> source;
  if (cfg.model_privacy) {
    if (oracle_spec.empty()) throw UsageError("--oracle is required unless model_privacy = false");
    oracle = make_oracle(oracle_spec);
  } else {
    if (source_path.empty()) throw UsageError("--source <checkpoint> is required when model_privacy = false");
    source = load_checkpoint(source_path);
  }
  RunDirectory run(out_dir, cfg, "# train-target\n# data = " + data_path + "\n");
  SignalScope signals;
  const TrainHooks hooks = run.hooks(&g_interrupted);
  TargetResult clustered = train_target_cluster(cfg, target, oracle.get(), source ? &*source : nullptr, hooks);
  save_checkpoint(clustered.model, run.path() / "adapted.ckpt");
  TargetResult refined = refine_target(cfg, target, std::move(clustered.model), clustered.proportions, hooks);
  save_checkpoint(refined.model, run.path() / "target.ckpt");
  write_text(run.path() / "oracle_queries.txt", std::to_string(clustered.oracle_queries) + "\n");
  out << eval_record("model=" + (run.path() / "target.ckpt").string(), refined.model, target)
      << " oracle_queries=" << clustered.oracle_queries << "\n";
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& data_path, std::ostream& out) {
  const ClusterModel model = load_checkpoint(model_path);
  const FeatureDataset data = load_target(data_path);
  if (data.dim() != model.spec.input_dim) throw UsageError("data width does not match the model input width");
  out << eval_record("model=" + model_path + " data=" + data_path, model, data) << "\n";
  return 0;
}

std::optional<Variant> toggle_variant(const std::string& t) {
  if (t == "source-only") return Variant::kSourceOnly;
  if (t == "target-only") return Variant::kTargetOnly;
  if (t == "adaptation-only") return Variant::kAdaptationOnly;
  return std::nullopt;
}

struct SweepRow {
  std::string name;
  PipelineResult result;
};

PipelineResult run_in_directory(const TrainConfig& cfg, const std::vector<FeatureDataset>& sources,
                                const FeatureDataset& target, Variant variant, const fs::path& dir,
                                const std::string& header) {
  RunDirectory run(dir, cfg, header);
  PipelineResult res = run_pipeline(cfg, sources, target, variant, nullptr, run.hooks(&g_interrupted));
  save_checkpoint(res.final_model, run.path() / "target.ckpt");
  return res;
}

int cmd_ablate(const std::string& data_dir, const std::string& out_dir, const std::string& toggles_arg,
               const TrainingOptions& opts, std::ostream& out) {
  const TrainConfig base = resolve(opts);
  std::vector<std::string> toggles = toggles_arg.empty() ? toggle_names() : split_list(toggles_arg);
  if (toggles_arg.empty()) {
    for (const char* v : {"source-only", "target-only", "adaptation-only"}) toggles.emplace_back(v);
  }
  std::vector<std::pair<std::string, TrainConfig>> runs;
  for (const auto& t : toggles) {
    TrainConfig cfg = base;
    if (!toggle_variant(t)) apply_toggle(cfg, t);
    runs.emplace_back(t, cfg);
  }
  const auto sources = load_sources(data_dir);
  const FeatureDataset target = load_target(data_dir);
  SignalScope signals;
  std::string csv = "toggle,accuracy,min_usage,oracle_queries\n";
  for (const auto& [name, cfg] : runs) {
    const Variant variant = toggle_variant(name).value_or(Variant::kFull);
    const PipelineResult res = run_in_directory(cfg, sources, target, variant, fs::path(out_dir) / name,
                                                "# ablate\n# toggle = " + name + "\n# data = " + data_dir + "\n");
    const std::string acc = res.final_eval.accuracy ? fmt(*res.final_eval.accuracy) : "";
    csv += name + "," + acc + "," + fmt(res.final_eval.usage.min_fraction) + "," + std::to_string(res.oracle_queries) + "\n";
    out << "toggle=" << name << " acc=" << fmt_opt(res.final_eval.accuracy)
        << " min_usage=" << fmt(res.final_eval.usage.min_fraction) << "\n";
  }
  write_text(fs::path(out_dir) / "summary.csv", csv);
  return 0;
}

int cmd_sensitivity(const std::string& data_dir, const std::string& out_dir, const std::string& term,
                    const std::string& values_arg, const TrainingOptions& opts, std::ostream& out) {
  const TrainConfig base = resolve(opts);
  static const std::map<std::string, std::string> keys{
      {"transport", "lambda_transport"}, {"mi", "lambda_mi"}, {"mix", "lambda_mix"}, {"kd", "lambda_kd"}};
  const auto it = keys.find(term);
  if (it == keys.end()) throw UsageError("--term must be one of transport, mi, mix, kd");
  const auto values = split_list(values_arg);
  if (values.empty()) throw UsageError("--values needs at least one value");
  std::vector<TrainConfig> cfgs;
  for (const auto& v : values) {
    TrainConfig cfg = base;
    apply_setting(cfg, it->second, v);
    try {
      cfg.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    cfgs.push_back(cfg);
  }
  const auto sources = load_sources(data_dir);
  const FeatureDataset target = load_target(data_dir);
  SignalScope signals;
  std::string csv = "term,value,accuracy,min_usage\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::string name = term + "=" + values[i];
    const PipelineResult res = run_in_directory(cfgs[i], sources, target, Variant::kFull, fs::path(out_dir) / name,
                                                "# sensitivity\n# data = " + data_dir + "\n");
    const std::string acc = res.final_eval.accuracy ? fmt(*res.final_eval.accuracy) : "";
    csv += term + "," + values[i] + "," + acc + "," + fmt(res.final_eval.usage.min_fraction) + "\n";
    out << name << " acc=" << fmt_opt(res.final_eval.accuracy) << " min_usage=" << fmt(res.final_eval.usage.min_fraction)
        << "\n";
  }
  write_text(fs::path(out_dir) / "summary.csv", csv);
  return 0;
}

// metrics.log line -> key/value pairs, keeping the order of appearance.
std::vector<std::pair<std::string, std::string>> parse_metrics_line(const std::string& line) {
  std::vector<std::pair<std::string, std::string>> kv;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw FormatError("metrics.log: malformed field '" + tok + "'");
    kv.emplace_back(tok.substr(0, eq), tok.substr(eq + 1));
  }
  return kv;
}

int cmd_report(const std::string& run_dir, const std::string& out_dir, const std::string& data_path,
               const std::string& model_path, std::ostream& out) {
  const fs::path run(run_dir);
  std::ifstream in(run / "metrics.log");
  if (!in) throw UsageError("no metrics.log in " + run.string());
  std::string losses = "stage,epoch,loss_transport,loss_mi,loss_cutmix,loss_kd,acc,min_usage\n";
  std::string props = "stage,epoch,domain,cluster,proportion\n";
  std::string line;
  std::vector<double> last_target_b;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::map<std::string, std::string> f;
    std::vector<std::pair<std::string, std::string>> domains;
    for (auto& [k, v] : parse_metrics_line(line)) {
      if (k.size() > 1 && k[0] == 'B') domains.emplace_back(k.substr(1), v);
      f[k] = v;
    }
    auto col = [&](const char* k) {
      const auto it = f.find(k);
      if (it == f.end()) throw FormatError(std::string("metrics.log: missing field ") + k);
      return it->second == "na" ? std::string() : it->second;
    };
    losses += col("stage") + "," + col("epoch") + "," + col("loss_transport") + "," + col("loss_mi") + "," +
              col("loss_cutmix") + "," + col("loss_kd") + "," + col("acc") + "," + col("min_usage") + "\n";
    for (const auto& [d, v] : domains) {
      const auto vals = split_list(v);
      for (std::size_t c = 0; c < vals.size(); ++c) {
        props += col("stage") + "," + col("epoch") + "," + d + "," + std::to_string(c) + "," + vals[c] + "\n";
      }
      if (f["stage"] != "source" && d == "0") {
        last_target_b.clear();
        for (const auto& s : vals) last_target_b.push_back(std::stod(s));
      }
    }
  }
  fs::create_directories(out_dir);
  write_text(fs::path(out_dir) / "losses.csv", losses);
  write_text(fs::path(out_dir) / "proportions.csv", props);
  out << "wrote " << (fs::path(out_dir) / "losses.csv").string() << " and proportions.csv\n";

  if (!data_path.empty()) {
    if (last_target_b.empty()) throw UsageError("run has no target-stage proportions to compare");
    const FeatureDataset data = load_target(data_path);
    if (!data.labels) throw UsageError("--data needs ground-truth labels for the proportion comparison");
    const fs::path mp = model_path.empty() ? run / "target.ckpt" : fs::path(model_path);
    const ClusterModel model = load_checkpoint(mp);
    const auto pred = assign_clusters(model, data.features);
    const auto mapping = best_cluster_mapping(confusion_matrix(pred, *data.labels, model.k()));
    const ProbVector est = permute_to_classes(last_target_b, mapping);
    const ProbVector truth = label_proportions(data, model.k());
    std::string bars = "class,estimated,true,uniform\n";
    for (std::size_t c = 0; c < truth.size(); ++c) {
      bars += std::to_string(c) + "," + fmt(est[c]) + "," + fmt(truth[c]) + "," + fmt(1.0 / static_cast<double>(truth.size())) + "\n";
    }
    write_text(fs::path(out_dir) / "proportion_bars.csv", bars);
    out << "l1_estimated=" << fmt(proportion_l1(est, truth))
        << " l1_uniform=" << fmt(proportion_l1(uniform(truth.size()), truth)) << "\n";
  }
  return 0;
}

std::string config_help() {
  std::string s = "Training keys (config file 'key = value' or --key value; flags win):\n";
  for (const auto& k : config_keys()) s += "  " + k.name + ": " + k.help + "\n";
  s += "Ablation toggles: ";
  for (const auto& t : toggle_names()) s += t + " ";
  s += "source-only target-only adaptation-only\n";
  return s;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Prototype-oriented clustering with distillation"};
  app.require_subcommand(1);
  app.footer(config_help());

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "write a synthetic multi-domain benchmark");
  gen_cmd->add_option("--spec", gen.spec, "default | imbalanced (drops part of the first K/2 target clusters)")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "output directory")->required();
  gen_cmd->add_option("--format", gen.format, "pcdd | csv")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "generator seed")->capture_default_str();
  gen_cmd->add_option("--k", gen.k, "number of classes")->capture_default_str();
  gen_cmd->add_option("--dim", gen.dim, "feature width")->capture_default_str();
  gen_cmd->add_option("--domains", gen.domains, "number of source domains")->capture_default_str();
  gen_cmd->add_option("--samples", gen.samples, "samples per source domain")->capture_default_str();
  gen_cmd->add_option("--target-samples", gen.target_samples, "target samples before subsampling")->capture_default_str();
  gen_cmd->add_option("--noise", gen.noise, "source noise std")->capture_default_str();
  gen_cmd->add_option("--target-noise", gen.target_noise, "target noise std")->capture_default_str();
  gen_cmd->add_option("--rotation", gen.rotation, "per-domain rotation strength")->capture_default_str();
  gen_cmd->add_option("--translation", gen.translation, "per-domain translation std")->capture_default_str();
  gen_cmd->add_option("--drop", gen.drop, "fraction dropped from the first K/2 clusters (imbalanced)")->capture_default_str();

  std::string ts_data, ts_out, ts_init;
  TrainingOptions ts_opts;
  auto* ts_cmd = app.add_subcommand("train-source", "stage 1: cluster the source domains");
  ts_cmd->add_option("--data", ts_data, "directory with source_<d>.pcdd (or .csv)")->required();
  ts_cmd->add_option("--out", ts_out, "run directory")->required();
  ts_cmd->add_option("--init", ts_init, "checkpoint whose encoder layers initialise the model (trained at lr_encoder)");
  add_training_options(ts_cmd, ts_opts);
  ts_cmd->footer(config_help());

  std::string sv_model, sv_addr = "127.0.0.1:7070";
  auto* sv_cmd = app.add_subcommand("serve", "serve a source checkpoint as a hard-label oracle");
  sv_cmd->add_option("--model", sv_model, "source checkpoint")->required();
  sv_cmd->add_option("--addr", sv_addr, "host:port to bind (port 0 picks a free port)")->capture_default_str();

  std::string tt_data, tt_oracle, tt_source, tt_out;
  TrainingOptions tt_opts;
  auto* tt_cmd = app.add_subcommand("train-target", "stages 2 and 3: distil from the oracle, then refine");
  tt_cmd->add_option("--data", tt_data, "target.pcdd / .csv, or a directory containing one")->required();
  tt_cmd->add_option("--oracle", tt_oracle, "tcp://host:port or local:<checkpoint>");
  tt_cmd->add_option("--source", tt_source, "source checkpoint (only with model_privacy = false)");
  tt_cmd->add_option("--out", tt_out, "run directory")->required();
  add_training_options(tt_cmd, tt_opts);
  tt_cmd->footer(config_help());

  std::string ev_model, ev_data;
  auto* ev_cmd = app.add_subcommand("eval", "print one result record for a checkpoint on a dataset");
  ev_cmd->add_option("--model", ev_model, "checkpoint")->required();
  ev_cmd->add_option("--data", ev_data, "dataset file or directory with target.pcdd")->required();

  std::string ab_data, ab_out, ab_toggles;
  TrainingOptions ab_opts;
  auto* ab_cmd = app.add_subcommand("ablate", "run the full pipeline once per ablation toggle");
  ab_cmd->add_option("--data", ab_data, "benchmark directory (source_<d> and target)")->required();
  ab_cmd->add_option("--out", ab_out, "output directory, one run directory per toggle")->required();
  ab_cmd->add_option("--toggle", ab_toggles, "comma-separated toggles (default: all)");
  add_training_options(ab_cmd, ab_opts);
  ab_cmd->footer(config_help());

  std::string se_data, se_out, se_term, se_values;
  TrainingOptions se_opts;
  auto* se_cmd = app.add_subcommand("sensitivity", "sweep one loss coefficient");
  se_cmd->add_option("--data", se_data, "benchmark directory")->required();
  se_cmd->add_option("--out", se_out, "output directory")->required();
  se_cmd->add_option("--term", se_term, "transport | mi | mix | kd")->required();
  se_cmd->add_option("--values", se_values, "comma-separated coefficient values")->required();
  add_training_options(se_cmd, se_opts);
  se_cmd->footer(config_help());

  std::string rp_run, rp_out, rp_data, rp_model;
  auto* rp_cmd = app.add_subcommand("report", "export loss curves and proportions as CSV");
  rp_cmd->add_option("--run", rp_run, "run directory containing metrics.log")->required();
  rp_cmd->add_option("--out", rp_out, "output directory for CSV files")->required();
  rp_cmd->add_option("--data", rp_data, "labelled target data for the estimated-vs-true proportion table");
  rp_cmd->add_option("--model", rp_model, "checkpoint used to map clusters to classes (default <run>/target.ckpt)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help(app.get_subcommands().empty() ? "" : app.get_subcommands().front()->get_name());
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(gen, out);
    if (*ts_cmd) return cmd_train_source(ts_data, ts_out, ts_init, ts_opts, out);
    if (*sv_cmd) return cmd_serve(sv_model, sv_addr, out);
    if (*tt_cmd) return cmd_train_target(tt_data, tt_oracle, tt_source, tt_out, tt_opts, out);
    if (*ev_cmd) return cmd_eval(ev_model, ev_data, out);
    if (*ab_cmd) return cmd_ablate(ab_data, ab_out, ab_toggles, ab_opts, out);
    if (*se_cmd) return cmd_sensitivity(se_data, se_out, se_term, se_values, se_opts, out);
    if (*rp_cmd) return cmd_report(rp_run, rp_out, rp_data, rp_model, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const Cancelled& e) {
    err << "interrupted: " << e.what() << " (logs flushed)\n";
    return 130;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

int run(int argc, const char* const* argv) { return run(argc, argv, std::cout, std::cerr); }

}  // namespace pcd::cli
