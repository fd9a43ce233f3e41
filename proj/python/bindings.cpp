// Python bindings for the treesae library.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "treesae/allocator.hpp"
#include "treesae/config.hpp"
#include "treesae/data.hpp"
#include "treesae/errors.hpp"
#include "treesae/log.hpp"
#include "treesae/metrics.hpp"
#include "treesae/trainer.hpp"

namespace py = pybind11;
using namespace treesae;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

DenseMatrix to_matrix(const Array& a) {
    if (a.ndim() != 2) throw DimensionError("expected a 2-d array, got " + std::to_string(a.ndim()) + "-d");
    const auto rows = static_cast<std::size_t>(a.shape(0));
    const auto cols = static_cast<std::size_t>(a.shape(1));
    return DenseMatrix(rows, cols, std::vector<double>(a.data(), a.data() + rows * cols));
}

Array to_array(const DenseMatrix& m) {
    Array out({m.rows(), m.cols()});
    std::copy(m.values().begin(), m.values().end(), out.mutable_data());
    return out;
}

Config parse_overrides(const std::string& text, const py::dict& overrides) {
    auto cfg = Config::parse(text);
    for (const auto& [k, v] : overrides) cfg.set(py::str(k), py::str(v));
    return cfg;
}

py::dict toy_dict(const ToyResult& r, const ToyCheck& c) {
    py::dict d;
    d["alpha"] = r.alpha;
    d["beta"] = r.beta;
    d["s_p"] = r.s_p;
    d["s_c"] = r.s_c;
    d["k"] = r.k;
    d["ec_dot_dp"] = r.ec_dot_dp;
    d["alpha_closed_form"] = r.alpha_closed_form;
    d["beta_closed_form"] = r.beta_closed_form;
    d["loss"] = r.loss;
    d["steps"] = r.steps;
    d["converged"] = r.converged;
    d["passed"] = c.passed;
    d["diagnostic"] = c.diagnostic;
    return d;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Tree sparse autoencoders";

    m.def("set_log_level", [](const std::string& level) {
        static const std::pair<const char*, log::Level> names[] = {
            {"debug", log::Level::debug}, {"info", log::Level::info}, {"warn", log::Level::warn},
            {"error", log::Level::error}, {"off", log::Level::off}};
        for (const auto& [n, l] : names)
            if (level == n) return log::set_level(l);
        throw std::invalid_argument("unknown log level '" + level + "'");
    });

    m.def(
        "generate",
        [](std::size_t rows, std::uint64_t seed, std::size_t d_model, std::size_t top_concepts,
           std::size_t children, double top_probability, double child_probability, double noise) {
            GeneratorConfig g;
            g.seed = seed;
            g.d_model = d_model;
            g.top_concepts = top_concepts;
            g.children_per_concept = children;
            g.top_probability = top_probability;
            g.child_probability = child_probability;
            g.noise = noise;
            if (rows == 0) throw std::invalid_argument("rows must be > 0");
            const auto tree = make_tree(g);
            auto data = generate(tree, rows, seed);
            std::vector<std::int64_t> parents;
            for (const auto& c : tree.concepts) parents.push_back(c.parent == kRoot ? -1 : static_cast<std::int64_t>(c.parent));
            return py::make_tuple(to_array(data.x), data.labels, parents);
        },
        py::arg("rows"), py::arg("seed") = 1234, py::arg("d_model") = 64, py::arg("top_concepts") = 6,
        py::arg("children") = 3, py::arg("top_probability") = 0.25, py::arg("child_probability") = 0.25,
        py::arg("noise") = 0.01,
        "Synthetic two-level concept data. Returns (x, labels, concept_parents); parent -1 is the root.");

    m.def(
        "save_dataset",
        [](const std::string& path, const Array& x, const std::string& metadata) {
            ActivationDataset ds;
            ds.x = to_matrix(x);
            ds.metadata = metadata;
            save_dataset(path, ds);
        },
        py::arg("path"), py::arg("x"), py::arg("metadata") = "");
    m.def(
        "load_dataset", [](const std::string& path) { return to_array(load_dataset(path).x); },
        py::arg("path"));

    py::class_<GreedyResult>(m, "Allocation")
        .def_readonly("counts", &GreedyResult::counts)
        .def_property_readonly("tau", [](const GreedyResult& g) -> py::object {
            if (!g.tau) return py::none();
            return py::make_tuple(g.tau->capacity, g.tau->count);
        });
    m.def(
        "greedy_allocate",
        [](const std::vector<double>& capacities, std::uint64_t s) {
            return greedy_allocate(capacities, {}, s);
        },
        py::arg("capacities"), py::arg("s"),
        "Assign s children to parents maximizing the minimum payoff C_p/k_p.");

    py::class_<Checkpoint>(m, "Checkpoint")
        .def_static("load", &load_checkpoint, py::arg("path"))
        .def("save", [](const Checkpoint& c, const std::string& path) { save_checkpoint(path, c); })
        .def_readonly("config_text", &Checkpoint::config_text)
        .def_property_readonly("step", [](const Checkpoint& c) { return c.state.step; })
        .def_property_readonly("layer_sizes", [](const Checkpoint& c) { return c.model.topology.layer_sizes(); })
        .def_property_readonly("layer_k", [](const Checkpoint& c) { return c.model.layer_k; })
        .def_property_readonly("parents",
                               [](const Checkpoint& c) {
                                   std::vector<std::int64_t> out;
                                   for (auto p : c.model.topology.parents()) out.push_back(p == kRoot ? -1 : static_cast<std::int64_t>(p));
                                   return out;
                               })
        .def_property_readonly("encoder", [](const Checkpoint& c) { return to_array(c.model.encoder); })
        .def_property_readonly("decoder", [](const Checkpoint& c) { return to_array(c.model.decoder); })
        .def_property_readonly("bias", [](const Checkpoint& c) { return to_array(c.model.bias); })
        .def(
            "encode",
            [](const Checkpoint& c, const Array& x) {
                const auto t = forward(c.model, to_matrix(x));
                DenseMatrix acts(t.activations.batch_size(), c.model.d_features());
                for (std::size_t r = 0; r < t.activations.batch_size(); ++r)
                    for (const auto& e : t.activations.rows[r]) acts(r, e.feature) = e.value;
                return to_array(acts);
            },
            py::arg("x"), "Dense activations (rows x features) after tree-masked top-k.")
        .def(
            "reconstruct",
            [](const Checkpoint& c, const Array& x) {
                const auto r = reconstruct(c.model, to_matrix(x));
                return py::make_tuple(to_array(r.x_hat), r.variance_explained);
            },
            py::arg("x"), "Returns (x_hat, variance_explained).")
        .def(
            "audit",
            [](const Checkpoint& c, const Array& x, const std::string& procedure, const std::string& variant,
               std::uint64_t seed) {
                const auto xm = to_matrix(x);
                const auto records = ActivationRecord::from_model(c.model, xm);
                HierarchyConfig hc;
                hc.procedure = parse_procedure(procedure);
                hc.mcs_variant = McsVariant::parse(variant);
                hc.seed = seed;
                hc.probe.seed = seed;
                const auto res = hierarchy_metric(c.model, xm, records, hc);
                py::dict d;
                d["pass_rate"] = res.pass_rate;
                d["pairs"] = res.pairs;
                d["passed"] = res.passed;
                d["co_occurrence"] = co_occurrence(records, c.model.topology);
                d["composition"] = composition(c.model.decoder);
                d["pairs_csv"] = hierarchy_report_csv(res);
                return d;
            },
            py::arg("x"), py::arg("procedure") = "tree", py::arg("mcs_variant") = "non-scaling-binary",
            py::arg("seed") = 0x41d17);

    py::class_<TrainResult>(m, "TrainResult")
        .def_readonly("checkpoint", &TrainResult::checkpoint)
        .def_property_readonly("telemetry_csv",
                               [](const TrainResult& r) {
                                   return r.telemetry.steps_csv(r.checkpoint.model.topology.num_layers());
                               })
        .def_property_readonly("events", [](const TrainResult& r) { return r.telemetry.events_text(); })
        .def_property_readonly("losses", [](const TrainResult& r) {
            std::vector<double> out;
            for (const auto& s : r.telemetry.steps) out.push_back(s.total);
            return out;
        });

    m.def(
        "train",
        [](const Array& x, const std::string& config, const py::dict& overrides) {
            const auto cfg = parse_overrides(config, overrides);
            const auto data = to_matrix(x);
            py::gil_scoped_release release;
            return train(TrainConfig::from_config(cfg), data);
        },
        py::arg("x"), py::arg("config") = "", py::arg("overrides") = py::dict(),
        "Train on rows of x. config is key = value text; overrides maps dotted keys to values.");
    m.def(
        "resume",
        [](const Checkpoint& c, const Array& x, std::optional<std::uint64_t> steps) {
            const auto data = to_matrix(x);
            py::gil_scoped_release release;
            return resume(c, data, steps);
        },
        py::arg("checkpoint"), py::arg("x"), py::arg("steps") = py::none());

    m.def(
        "two_feature_check",
        [](std::size_t dim, std::uint64_t seed, bool parent_instances) {
            ToyConfig t;
            t.dim = dim;
            t.seed = seed;
            t.parent_instances = parent_instances;
            const auto r = two_feature_toy_run(t);
            return toy_dict(r, two_feature_toy_check(r));
        },
        py::arg("dim") = 16, py::arg("seed") = 7, py::arg("parent_instances") = true);

    py::register_exception<FormatError>(m, "FormatError", PyExc_RuntimeError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
}
