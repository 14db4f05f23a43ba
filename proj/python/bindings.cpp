// Python bindings for the fatcc core. Arrays cross the boundary as float64
// numpy arrays; prototype sets as lists with None for absent classes.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>
#include <sstream>

#include "fatcc/attacks.hpp"
#include "fatcc/data.hpp"
#include "fatcc/errors.hpp"
#include "fatcc/evaluate.hpp"
#include "fatcc/experiment.hpp"
#include "fatcc/federation.hpp"
#include "fatcc/nn.hpp"
#include "fatcc/objective.hpp"

namespace py = pybind11;
using namespace fatcc;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using IntArray = py::array_t<int, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D array, got " + std::to_string(a.ndim()) + " dimensions");
  const auto r = static_cast<std::size_t>(a.shape(0)), c = static_cast<std::size_t>(a.shape(1));
  return Tensor({r, c}, std::vector<double>(a.data(), a.data() + r * c));
}

Array to_array(const Tensor& t) {
  Array out({static_cast<py::ssize_t>(t.rows()), static_cast<py::ssize_t>(t.cols())});
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Array to_array(const std::vector<double>& v) {
  Array out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

std::vector<int> to_labels(const IntArray& a) {
  if (a.ndim() != 1) throw ShapeError("labels must be 1-D");
  return {a.data(), a.data() + a.size()};
}

PrototypeSet to_prototypes(const std::vector<std::optional<std::vector<double>>>& slots) {
  std::size_t width = 0;
  for (const auto& s : slots) {
    if (s) width = s->size();
  }
  PrototypeSet p(slots.size(), width);
  for (std::size_t c = 0; c < slots.size(); ++c) {
    if (slots[c]) p.set(c, *slots[c]);
  }
  return p;
}

std::vector<std::optional<std::vector<double>>> from_prototypes(const PrototypeSet& p) {
  std::vector<std::optional<std::vector<double>>> out;
  for (std::size_t c = 0; c < p.num_classes(); ++c) out.push_back(p.slot(c));
  return out;
}

py::dict report_dict(const RoundReport& r) {
  py::dict d;
  d["round"] = r.round;
  d["ca"] = r.clean_accuracy;
  for (const auto& [name, v] : r.robust_accuracy) d[py::str("ra_" + name)] = v;
  d["train_loss"] = r.train_loss;
  return d;
}

AttackConfig attack_config(double epsilon, double step_size, std::size_t steps, bool random_start) {
  AttackConfig c;
  c.epsilon = epsilon;
  c.step_size = step_size;
  c.steps = steps;
  c.random_start = random_start;
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Federated adversarial training with logit calibration and prototype contrast";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  py::class_<ModelParams>(m, "Model")
      .def_property_readonly("input_dim", &ModelParams::input_dim)
      .def_property_readonly("num_classes", &ModelParams::num_classes)
      .def_property_readonly("feature_dim", &ModelParams::feature_dim)
      .def_property_readonly("parameter_count", &ModelParams::parameter_count)
      .def("flatten", [](const ModelParams& p) { return to_array(p.flatten()); })
      .def("assign_flat",
           [](ModelParams& p, const Array& flat) { p.assign_flat(std::vector<double>(flat.data(), flat.data() + flat.size())); })
      .def("copy", [](const ModelParams& p) { return p; })
      .def(
          "forward",
          [](const ModelParams& p, const Array& x) {
            const auto t = forward(p, to_tensor(x));
            return py::make_tuple(to_array(t.logits()), to_array(t.features()));
          },
          py::arg("x"), "Returns (logits, features).")
      .def("predict", [](const ModelParams& p, const Array& x) { return predict(p, to_tensor(x)); })
      .def("__eq__", [](const ModelParams& a, const ModelParams& b) { return a == b; });

  m.def("init_mlp", [](const std::vector<std::size_t>& widths, std::uint64_t seed) { return init_mlp(widths, seed); },
        py::arg("widths"), py::arg("seed"));

  m.def(
      "cross_entropy",
      [](const Array& logits, const IntArray& labels) { return cross_entropy(to_tensor(logits), to_labels(labels)); },
      py::arg("logits"), py::arg("labels"));

  m.def(
      "modulating_weights",
      [](const IntArray& labels, std::size_t num_classes, double alpha, double beta) {
        const auto y = to_labels(labels);
        return to_array(modulating_weights(batch_class_stats(y, num_classes), {alpha, beta, true}).w);
      },
      py::arg("labels"), py::arg("num_classes"), py::arg("alpha") = 10.0, py::arg("beta") = 5.0);

  m.def(
      "calibrated_ce",
      [](const Array& logits, const std::vector<double>& weights, const IntArray& labels) {
        return calibrated_ce(to_tensor(logits), ClassWeights{weights}, to_labels(labels));
      },
      py::arg("logits"), py::arg("weights"), py::arg("labels"));

  m.def(
      "local_prototypes",
      [](const Array& features, const IntArray& labels, std::size_t num_classes) {
        return from_prototypes(local_prototypes(to_tensor(features), to_labels(labels), num_classes));
      },
      py::arg("features"), py::arg("labels"), py::arg("num_classes"));

  m.def(
      "aggregate_global",
      [](const std::vector<std::vector<std::optional<std::vector<double>>>>& sets) {
        std::vector<PrototypeSet> ps;
        for (const auto& s : sets) ps.push_back(to_prototypes(s));
        return from_prototypes(aggregate_global(ps));
      },
      py::arg("prototype_sets"));

  m.def(
      "contrastive_loss",
      [](const Array& features, const IntArray& labels, const std::vector<std::optional<std::vector<double>>>& global,
         double tau) { return contrastive_loss(to_tensor(features), to_labels(labels), to_prototypes(global), tau); },
      py::arg("features"), py::arg("labels"), py::arg("prototypes"), py::arg("tau") = 0.07);

  m.def(
      "taylor_ratio",
      [](const Array& features, const IntArray& labels, const std::vector<std::optional<std::vector<double>>>& global,
         double tau) { return taylor_ratio_diagnostic(to_tensor(features), to_labels(labels), to_prototypes(global), tau); },
      py::arg("features"), py::arg("labels"), py::arg("prototypes"), py::arg("tau") = 0.07);

  m.def(
      "fgsm",
      [](const ModelParams& p, const Array& x, const IntArray& y, double epsilon) {
        return to_array(fgsm(p, to_tensor(x), to_labels(y), epsilon).perturbed);
      },
      py::arg("model"), py::arg("x"), py::arg("y"), py::arg("epsilon"));

  m.def(
      "pgd",
      [](const ModelParams& p, const Array& x, const IntArray& y, double epsilon, double step_size, std::size_t steps,
         bool random_start, std::uint64_t seed) {
        return to_array(pgd(p, to_tensor(x), to_labels(y), attack_config(epsilon, step_size, steps, random_start), seed).perturbed);
      },
      py::arg("model"), py::arg("x"), py::arg("y"), py::arg("epsilon"), py::arg("step_size"), py::arg("steps") = 10,
      py::arg("random_start") = true, py::arg("seed") = 0);

  m.def(
      "bim",
      [](const ModelParams& p, const Array& x, const IntArray& y, double epsilon, double step_size, std::size_t steps) {
        return to_array(bim(p, to_tensor(x), to_labels(y), attack_config(epsilon, step_size, steps, false)).perturbed);
      },
      py::arg("model"), py::arg("x"), py::arg("y"), py::arg("epsilon"), py::arg("step_size"), py::arg("steps") = 10);

  m.def(
      "dirichlet_partition",
      [](const IntArray& labels, std::size_t num_classes, std::size_t num_clients, double gamma, std::uint64_t seed) {
        Dataset d;
        d.labels = to_labels(labels);
        d.num_classes = num_classes;
        d.inputs = Tensor::matrix(d.labels.size(), 1);
        std::vector<std::vector<std::size_t>> out;
        for (auto& s : dirichlet_partition(d, {num_clients, gamma, seed})) out.push_back(std::move(s.indices));
        return out;
      },
      py::arg("labels"), py::arg("num_classes"), py::arg("num_clients") = 5, py::arg("gamma") = 0.5, py::arg("seed") = 0);

  m.def(
      "synth_gaussian",
      [](std::size_t num_classes, std::size_t dims, std::size_t per_class, double spread, std::uint64_t seed) {
        const Dataset d = synth_gaussian(num_classes, dims, per_class, spread, seed);
        return py::make_tuple(to_array(d.inputs), d.labels);
      },
      py::arg("num_classes"), py::arg("dims"), py::arg("per_class"), py::arg("spread"), py::arg("seed"));

  m.def(
      "fedavg",
      [](const std::vector<ModelParams>& models, const std::vector<std::size_t>& sizes) { return fedavg(models, sizes); },
      py::arg("models"), py::arg("sizes"));

  m.def(
      "run_experiment",
      [](const std::filesystem::path& config, const std::vector<std::string>& overrides) {
        auto kv = KeyValues::load(config);
        for (const auto& o : overrides) kv.apply_override(o);
        const auto outcomes = run_experiment(ExperimentConfig::from_key_values(kv));
        py::list result;
        for (const auto& o : outcomes) {
          py::dict d;
          d["method"] = to_string(o.method);
          d["path"] = o.path;
          py::list rounds;
          for (const auto& r : o.reports) rounds.append(report_dict(r));
          d["rounds"] = rounds;
          d["summary"] = report_dict(o.summary);
          result.append(d);
        }
        return result;
      },
      py::arg("config"), py::arg("overrides") = std::vector<std::string>{},
      "Runs every configured method and writes the CSV reports; returns per-method results.");

  m.def(
      "compare_report",
      [](const std::filesystem::path& a, const std::filesystem::path& b) {
        py::dict out;
        for (const auto& d : compare_report(a, b)) out[py::str(d.metric)] = d.delta;
        return out;
      },
      py::arg("a"), py::arg("b"), "Per-metric summary-row deltas a - b.");
}
