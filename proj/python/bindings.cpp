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

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "pcd/errors.hpp"
#include "pcd/pipeline.hpp"

namespace py = pybind11;
using namespace pcd;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array");
  Matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.data().begin());
  return m;
}

std::vector<double> to_vector(const Array& a) {
  if (a.ndim() != 1) throw std::invalid_argument("expected a 1-D array");
  return {a.data(), a.data() + a.size()};
}

Array to_array(const Matrix& m) {
  Array a({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), a.mutable_data());
  return a;
}

py::array_t<std::uint32_t> to_labels(const std::vector<std::uint32_t>& v) {
  py::array_t<std::uint32_t> a(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), a.mutable_data());
  return a;
}

FeatureDataset make_dataset(const Array& x, std::optional<std::vector<std::uint32_t>> labels, std::uint32_t domain) {
  FeatureDataset d;
  d.domain = domain;
  d.features = to_matrix(x);
  d.labels = std::move(labels);
  d.ids.resize(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) d.ids[i] = i;
  d.validate();
  return d;
}

py::dict loss_dict(const LossBundle& b) {
  py::dict d;
  d["value"] = b.value;
  d["grad_logits"] = to_array(b.grad_logits);
  return d;
}

py::dict eval_dict(const Evaluation& e) {
  py::dict d;
  d["accuracy"] = e.accuracy;
  d["usage"] = e.usage.fractions;
  d["min_usage"] = e.usage.min_fraction;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Prototype-oriented clustering with distillation";

  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<ProtocolError>(m, "ProtocolError", PyExc_RuntimeError);
  py::register_exception<OracleError>(m, "OracleError", PyExc_RuntimeError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);

  // numerics ------------------------------------------------------------------
  m.def("softmax", [](const Array& x, double t) { return softmax(to_vector(x), t); }, py::arg("logits"),
        py::arg("temperature") = 1.0);
  m.def("entropy", [](const Array& p) { return entropy(to_vector(p)); });
  m.def("kl_div", [](const Array& p, const Array& q) { return kl_div(to_vector(p), to_vector(q)); });

  // transport -----------------------------------------------------------------
  m.def("build_cost", [](const Array& f, const Array& mu) { return to_array(ot::build_cost(to_matrix(f), to_matrix(mu)).values); },
        py::arg("features"), py::arg("prototypes"));
  m.def(
      "sinkhorn",
      [](const Array& cost, const Array& u, const Array& v, double epsilon, std::size_t max_iters, double tol) {
        ot::SinkhornConfig cfg;
        cfg.epsilon = epsilon;
        cfg.max_iters = max_iters;
        cfg.marginal_tol = tol;
        const ot::TransportPlan p = ot::sinkhorn(ot::CostMatrix{to_matrix(cost)}, to_vector(u), to_vector(v), cfg);
        py::dict d;
        d["plan"] = to_array(p.plan);
        d["iterations"] = p.iterations;
        d["residual"] = p.residual;
        d["converged"] = p.converged;
        return d;
      },
      py::arg("cost"), py::arg("u"), py::arg("v"), py::arg("epsilon") = 0.01, py::arg("max_iters") = 5000,
      py::arg("tol") = 1e-6);
  m.def("transport_cost", [](const Array& plan, const Array& cost) {
    return ot::transport_cost(to_matrix(plan), ot::CostMatrix{to_matrix(cost)});
  });

  // losses --------------------------------------------------------------------
  m.def("mi_loss", [](const Array& probs) { return loss_dict(mi_loss(to_matrix(probs))); });
  m.def("kd_loss", [](const Array& targets, const Array& probs) {
    return loss_dict(kd_loss(to_matrix(targets), to_matrix(probs)));
  });
  m.def("smooth_labels", [](const Array& hard, double gamma) { return smooth_labels(to_vector(hard), SmoothingConfig{gamma}); },
        py::arg("hard"), py::arg("gamma") = 0.1);

  // proportions and schedules ---------------------------------------------------
  m.def("posterior", [](const Array& logits, const Array& prior) {
    return to_array(posterior(to_matrix(logits), to_vector(prior)));
  });
  m.def("lr_at", &lr_at, py::arg("eta0"), py::arg("progress"));
  m.def(
      "beta_at",
      [](double beta0, double beta_min, double p) {
        ProportionState s;
        s.beta0 = beta0;
        s.beta_min = beta_min;
        return beta_at(s, p);
      },
      py::arg("beta0"), py::arg("beta_min"), py::arg("progress"));

  // evaluation ------------------------------------------------------------------
  m.def(
      "clustering_accuracy",
      [](const std::vector<std::uint32_t>& pred, const std::vector<std::uint32_t>& truth, std::size_t k) {
        return clustering_accuracy(pred, truth, k);
      },
      py::arg("pred"), py::arg("truth"), py::arg("k"));
  m.def("solve_assignment", [](const Array& cost) { return solve_assignment(to_matrix(cost)); });
  m.def("proportion_l1", [](const Array& a, const Array& b) { return proportion_l1(to_vector(a), to_vector(b)); });

  // data ------------------------------------------------------------------------
  py::class_<FeatureDataset>(m, "FeatureDataset")
      .def(py::init(&make_dataset), py::arg("features"), py::arg("labels") = std::nullopt, py::arg("domain") = 0)
      .def_property_readonly("features", [](const FeatureDataset& d) { return to_array(d.features); })
      .def_property_readonly("labels", [](const FeatureDataset& d) -> py::object {
        if (!d.labels) return py::none();
        return to_labels(*d.labels);
      })
      .def_readonly("domain", &FeatureDataset::domain)
      .def("__len__", &FeatureDataset::size)
      .def_property_readonly("dim", &FeatureDataset::dim);

  m.def(
      "generate",
      [](std::uint64_t seed, std::size_t k, std::size_t dim, std::size_t domains, std::size_t samples,
         std::size_t target_samples, double noise, double target_noise, double rotation, double translation) {
        SyntheticSpec s;
        s.seed = seed;
        s.k = k;
        s.dim = dim;
        s.source_domains = domains;
        s.samples_per_domain = samples;
        s.target_samples = target_samples;
        s.noise = noise;
        s.target_noise = target_noise;
        s.rotation_scale = rotation;
        s.translation_scale = translation;
        SyntheticData data = generate(s);
        return py::make_tuple(data.sources, data.target);
      },
      py::arg("seed") = 0, py::arg("k") = 5, py::arg("dim") = 20, py::arg("domains") = 3, py::arg("samples") = 500,
      py::arg("target_samples") = 500, py::arg("noise") = 0.5, py::arg("target_noise") = 1.0,
      py::arg("rotation") = 0.1, py::arg("translation") = 0.5);
  m.def("subsample_imbalanced", &subsample_imbalanced, py::arg("data"), py::arg("k"), py::arg("drop_fraction") = 0.7,
        py::arg("seed") = 0);
  m.def("label_proportions", &label_proportions);
  m.def("load_features", [](const std::filesystem::path& p) { return load_features(p); });
  m.def("save_dataset", &save_dataset);

  // model -----------------------------------------------------------------------
  py::class_<ClusterModel>(m, "ClusterModel")
      .def_property_readonly("k", &ClusterModel::k)
      .def_property_readonly("input_dim", [](const ClusterModel& c) { return c.spec.input_dim; })
      .def_readonly("temperature", &ClusterModel::temperature)
      .def_property_readonly("prototypes", [](const ClusterModel& c) { return to_array(c.bank.prototypes); })
      .def("encode", [](const ClusterModel& c, const Array& x) { return to_array(encode_features(c, to_matrix(x))); })
      .def("predict", [](const ClusterModel& c, const Array& x) { return to_array(predict(c, to_matrix(x))); })
      .def("assign", [](const ClusterModel& c, const Array& x) { return to_labels(assign_clusters(c, to_matrix(x))); })
      .def("save", [](const ClusterModel& c, const std::filesystem::path& p) { save_checkpoint(c, p); })
      .def_static("load", &load_checkpoint);

  // training --------------------------------------------------------------------
  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("k", &TrainConfig::k)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("epochs_source", &TrainConfig::epochs_source)
      .def_readwrite("epochs_target", &TrainConfig::epochs_target)
      .def_readwrite("epochs_refine", &TrainConfig::epochs_refine)
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("momentum", &TrainConfig::momentum)
      .def_readwrite("weight_decay", &TrainConfig::weight_decay)
      .def_readwrite("epsilon", &TrainConfig::epsilon)
      .def_readwrite("cutmix_alpha", &TrainConfig::cutmix_alpha)
      .def_readwrite("tau", &TrainConfig::tau)
      .def_readwrite("gamma", &TrainConfig::gamma)
      .def_readwrite("temperature", &TrainConfig::temperature)
      .def_readwrite("hidden_dims", &TrainConfig::hidden_dims)
      .def_readwrite("feature_dim", &TrainConfig::feature_dim)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("model_privacy", &TrainConfig::model_privacy)
      .def_readwrite("temporal_ensemble", &TrainConfig::temporal_ensemble)
      .def_readwrite("pooled_source", &TrainConfig::pooled_source)
      .def_property(
          "use_mi", [](const TrainConfig& c) { return c.toggles.mi; }, [](TrainConfig& c, bool b) { c.toggles.mi = b; })
      .def_property(
          "use_transport", [](const TrainConfig& c) { return c.toggles.transport; },
          [](TrainConfig& c, bool b) { c.toggles.transport = b; })
      .def_property(
          "use_cutmix", [](const TrainConfig& c) { return c.toggles.cutmix; },
          [](TrainConfig& c, bool b) { c.toggles.cutmix = b; })
      .def("validate", &TrainConfig::validate);

  m.def(
      "run_pipeline",
      [](const TrainConfig& cfg, const std::vector<FeatureDataset>& sources, const FeatureDataset& target,
         const std::string& variant) {
        PipelineResult r;
        {
          py::gil_scoped_release release;
          r = run_pipeline(cfg, sources, target, parse_variant(variant));
        }
        py::dict d;
        d["model"] = r.final_model;
        d["final"] = eval_dict(r.final_eval);
        d["adapted"] = eval_dict(r.adapted_eval);
        d["oracle_queries"] = r.oracle_queries;
        d["metrics"] = r.log.to_text();
        if (r.target_proportions) d["proportions"] = r.target_proportions->domains.front();
        return d;
      },
      py::arg("config"), py::arg("sources"), py::arg("target"), py::arg("variant") = "pcd");

  // oracle ----------------------------------------------------------------------
  py::class_<LocalOracle>(m, "LocalOracle")
      .def(py::init<ClusterModel>())
      .def("label", [](LocalOracle& o, const Array& x) { return to_labels(o.label(to_matrix(x))); })
      .def_property_readonly("rows_queried", &LocalOracle::rows_queried);
  py::class_<OracleServer>(m, "OracleServer")
      .def(py::init([](const ClusterModel& model, const std::string& addr) {
        return std::make_unique<OracleServer>(std::make_shared<const ClusterModel>(model), Endpoint::parse(addr));
      }))
      .def("start", &OracleServer::start)
      .def("stop", &OracleServer::stop, py::call_guard<py::gil_scoped_release>())
      .def_property_readonly("port", &OracleServer::port);
  m.def(
      "remote_label",
      [](const std::string& addr, const Array& x) {
        RemoteOracle o(Endpoint::parse(addr));
        const Matrix rows = to_matrix(x);
        std::vector<std::uint32_t> labels;
        {
          py::gil_scoped_release release;
          labels = o.label(rows);
        }
        return to_labels(labels);
      },
      py::arg("address"), py::arg("features"));
}
