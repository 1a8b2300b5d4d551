// Python surface for the core library: dataset generation, probe training,
// diversity estimation, and the regression helper. Pipeline orchestration
// stays on the CLI.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "divlab/analysis.hpp"
#include "divlab/diversity.hpp"
#include "divlab/errors.hpp"
#include "divlab/experiment.hpp"
#include "divlab/probe.hpp"
#include "divlab/rng.hpp"
#include "divlab/tasks.hpp"

namespace py = pybind11;
using namespace divlab;

namespace {

std::string pairing_name(Pairing p) {
  return p == Pairing::kExhaustive ? "exhaustive" : "sampled";
}

Pairing pairing_from_name(const std::string& name) {
  if (name == "exhaustive") return Pairing::kExhaustive;
  if (name == "sampled") return Pairing::kSampled;
  throw ConfigError("pairing must be 'exhaustive' or 'sampled', got '" + name + "'");
}

}  // namespace

PYBIND11_MODULE(_divlab, m) {
  m.doc() = "Task2Vec diversity coefficient laboratory (core library)";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  py::class_<SyntheticSpec>(m, "SyntheticSpec")
      .def(py::init([](std::string id, int64_t class_count, int64_t feature_dim,
                       int64_t samples_per_class, double proto_spread, double within_class_noise,
                       double center_norm, uint64_t seed) {
             SyntheticSpec s;
             s.id = std::move(id);
             s.class_count = class_count;
             s.feature_dim = feature_dim;
             s.samples_per_class = samples_per_class;
             s.proto_spread = proto_spread;
             s.within_class_noise = within_class_noise;
             s.center_norm = center_norm;
             s.seed = seed;
             return s;
           }),
           py::arg("id"), py::arg("class_count"), py::arg("feature_dim"),
           py::arg("samples_per_class"), py::arg("proto_spread"),
           py::arg("within_class_noise") = 1.0, py::arg("center_norm") = 0.0,
           py::arg("seed") = 0)
      .def_readwrite("id", &SyntheticSpec::id)
      .def_readwrite("class_count", &SyntheticSpec::class_count)
      .def_readwrite("feature_dim", &SyntheticSpec::feature_dim)
      .def_readwrite("samples_per_class", &SyntheticSpec::samples_per_class)
      .def_readwrite("proto_spread", &SyntheticSpec::proto_spread)
      .def_readwrite("within_class_noise", &SyntheticSpec::within_class_noise)
      .def_readwrite("center_norm", &SyntheticSpec::center_norm)
      .def_readwrite("seed", &SyntheticSpec::seed);

  py::class_<DatasetHandle>(m, "DatasetHandle")
      .def_property_readonly("dataset_id", &DatasetHandle::dataset_id)
      .def_property_readonly("class_count", &DatasetHandle::class_count)
      .def_property_readonly("feature_dim", &DatasetHandle::feature_dim)
      .def_property_readonly("samples_per_class", &DatasetHandle::samples_per_class)
      .def("split_view",
           [](const DatasetHandle& h, const std::string& split) {
             if (split == "all") return h.split_view(Split::kAll);
             if (split == "train") return h.split_view(Split::kTrain);
             if (split == "val") return h.split_view(Split::kVal);
             if (split == "test") return h.split_view(Split::kTest);
             throw ConfigError("split must be all/train/val/test, got '" + split + "'");
           },
           py::arg("split"))
      .def("subsample_per_class", &DatasetHandle::subsample_per_class, py::arg("fraction"),
           py::arg("seed"));

  m.def("generate_synthetic", &generate_synthetic, py::arg("spec"));
  m.def("load_dataset", [](const std::string& path) { return load_dataset(path); },
        py::arg("path"));

  py::class_<ProbeTrainConfig>(m, "ProbeTrainConfig")
      .def(py::init<>())
      .def_readwrite("hidden", &ProbeTrainConfig::hidden)
      .def_readwrite("batch_size", &ProbeTrainConfig::batch_size)
      .def_readwrite("lr", &ProbeTrainConfig::lr)
      .def_readwrite("max_epochs", &ProbeTrainConfig::max_epochs)
      .def_readwrite("target_accuracy", &ProbeTrainConfig::target_accuracy)
      .def_readwrite("seed", &ProbeTrainConfig::seed);

  py::class_<ProbeNetwork>(m, "ProbeNetwork")
      .def_property_readonly("probe_id", &ProbeNetwork::probe_id)
      .def_property_readonly("train_accuracy", &ProbeNetwork::train_accuracy)
      .def("save", [](const ProbeNetwork& p, const std::string& base) { p.save(base); },
           py::arg("base"))
      .def_static("load", [](const std::string& base) { return ProbeNetwork::load(base); },
                  py::arg("base"));

  m.def("pretrain_probe", &pretrain_probe, py::arg("meta_dataset"), py::arg("config"));

  py::class_<DiversityConfig>(m, "DiversityConfig")
      .def(py::init<>())
      .def_readwrite("num_batches", &DiversityConfig::num_batches)
      .def_property("pairing",
                    [](const DiversityConfig& c) { return pairing_name(c.pairing); },
                    [](DiversityConfig& c, const std::string& v) { c.pairing = pairing_from_name(v); })
      .def_readwrite("sampled_pairs", &DiversityConfig::sampled_pairs)
      .def_property("label_mode",
                    [](const DiversityConfig& c) { return label_mode_name(c.label_mode); },
                    [](DiversityConfig& c, const std::string& v) { c.label_mode = label_mode_from_name(v); })
      .def_readwrite("mc_draws", &DiversityConfig::mc_draws)
      .def_readwrite("head_steps", &DiversityConfig::head_steps)
      .def_readwrite("head_lr", &DiversityConfig::head_lr)
      .def_readwrite("n_way", &DiversityConfig::n_way)
      .def_readwrite("k_shot", &DiversityConfig::k_shot)
      .def_readwrite("q_size", &DiversityConfig::q_size);

  py::class_<DiversityEstimate>(m, "DiversityEstimate")
      .def_readonly("mean", &DiversityEstimate::mean)
      .def_readonly("ci_half_width", &DiversityEstimate::ci_half_width)
      .def_readonly("num_batches", &DiversityEstimate::num_batches)
      .def_readonly("num_pairs", &DiversityEstimate::num_pairs)
      .def_readonly("probe_id", &DiversityEstimate::probe_id)
      .def_readonly("dataset_id", &DiversityEstimate::dataset_id)
      .def("__repr__", [](const DiversityEstimate& e) {
        return "DiversityEstimate(" + format_estimate(e.mean, e.ci_half_width) + ", pairs=" +
               std::to_string(e.num_pairs) + ")";
      });

  m.def("diversity_coefficient", &diversity_coefficient, py::arg("dataset"), py::arg("probe"),
        py::arg("config"), py::arg("seed"));

  py::class_<LinearFit>(m, "LinearFit")
      .def_readonly("slope", &LinearFit::slope)
      .def_readonly("intercept", &LinearFit::intercept)
      .def_readonly("r2", &LinearFit::r2);

  m.def("fit_linear_r2", &fit_linear_r2, py::arg("xs"), py::arg("ys"));
  m.def("derive_seed", [](uint64_t master, const std::string& label) {
          return derive_seed(master, label);
        },
        py::arg("master"), py::arg("label"));
  m.def("default_config_json", [] { return ExperimentConfig::defaults().to_json_text(); });
}
