#include <numeric>
#include <optional>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "flora/checkpoint.hpp"
#include "flora/log.hpp"
#include "flora/service.hpp"
#include "flora/training.hpp"

namespace py = pybind11;
using namespace flora;

namespace {

std::size_t input_size_or_default(const std::string& arch, std::optional<std::size_t> size) {
    return size ? *size : default_input_size(arch);
}

py::dict count_parameters_py(const std::string& arch, const std::string& head, std::size_t classes, double freeze,
                             std::optional<std::size_t> input_size) {
    const auto desc = build_architecture(arch, input_size_or_default(arch, input_size), classes, head_from_string(head));
    const auto plan = apply_freeze(desc, freeze);
    const auto counts = count_parameters(desc, plan);
    py::dict d;
    d["total"] = counts.total;
    d["trainable"] = counts.trainable;
    d["non_trainable"] = counts.non_trainable;
    d["layers"] = count_layers(desc);
    d["frozen_layers"] = plan.frozen_count;
    return d;
}

std::string build_descriptor_py(const std::string& arch, std::optional<std::size_t> input_size, std::size_t classes,
                                const std::string& head) {
    return descriptor_to_json(
               build_architecture(arch, input_size_or_default(arch, input_size), classes, head_from_string(head)))
        .dump();
}

py::dict macro_metrics_py(const std::vector<std::vector<std::uint64_t>>& counts) {
    ConfusionMatrix cm(counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i) {
        if (counts[i].size() != counts.size()) throw std::invalid_argument("confusion matrix must be square");
        for (std::size_t j = 0; j < counts.size(); ++j) {
            for (std::uint64_t n = 0; n < counts[i][j]; ++n) cm.add(i, j);
        }
    }
    const auto m = macro_metrics(cm);
    py::dict d;
    d["accuracy_eq1"] = m.accuracy_eq1;
    d["specificity"] = m.specificity;
    d["precision"] = m.precision;
    d["recall"] = m.recall;
    d["error_rate"] = m.error_rate;
    d["f1"] = m.f1;
    d["top1_accuracy"] = m.top1_accuracy;
    d["warnings"] = m.warnings;
    return d;
}

py::list synth_images_py(std::size_t classes, std::size_t per_class, std::size_t size, std::uint64_t seed) {
    const auto data = synth_dataset(classes, per_class, size, seed);
    py::list out;
    for (std::size_t i = 0; i < data.samples.size(); ++i) {
        const auto png = encode_png(data.image(i));
        out.append(py::make_tuple(data.samples[i].label,
                                  py::bytes(reinterpret_cast<const char*>(png.data()), png.size())));
    }
    return out;
}

py::dict train_synth_py(const std::string& arch, std::size_t classes, std::size_t per_class, std::size_t size,
                        const std::string& optimizer, std::size_t epochs, std::optional<double> lr, std::uint64_t seed,
                        double freeze, const std::string& out) {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.optimizer = OptimizerConfig::defaults(optimizer_from_string(optimizer));
    if (lr) cfg.optimizer.learning_rate = *lr;
    cfg.seed = seed;
    cfg.freeze_ratio = freeze;
    std::vector<EpochStats> history;
    std::uint64_t steps = 0;
    {
        py::gil_scoped_release release;
        const auto data = synth_dataset(classes, per_class, size, seed);
        std::vector<std::size_t> all(data.samples.size());
        std::iota(all.begin(), all.end(), 0);
        auto result = train(build_architecture(arch, size, classes, HeadKind::Gap), data, all, {}, cfg);
        history = result.history;
        steps = result.steps;
        save_checkpoint(out, make_checkpoint(std::move(result), data.class_names, cfg));
    }
    py::list epochs_out;
    for (const auto& e : history) {
        py::dict row;
        row["train_loss"] = e.train_loss;
        row["train_accuracy"] = e.train_accuracy;
        epochs_out.append(row);
    }
    py::dict d;
    d["history"] = epochs_out;
    d["steps"] = steps;
    return d;
}

py::dict classify_py(const ModelHandle& h, const py::bytes& image, std::size_t k) {
    const std::string bytes = image;
    ClassifyResponse r;
    {
        py::gil_scoped_release release;
        r = classify(h, std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()), k);
    }
    py::list top;
    for (const auto& s : r.top_k) {
        py::dict c;
        c["class"] = s.name;
        c["index"] = s.index;
        c["probability"] = s.probability;
        top.append(c);
    }
    py::dict d;
    d["model"] = r.model;
    d["top_k"] = top;
    d["latency_ms"] = r.latency_ms;
    d["probability_sum"] = r.probability_sum;
    return d;
}

py::dict benchmark_py(const ModelHandle& h, std::size_t runs, std::size_t warmup, std::uint64_t seed) {
    BenchmarkReport r;
    {
        py::gil_scoped_release release;
        r = benchmark(h, runs, warmup, seed);
    }
    py::dict d;
    d["runs"] = r.runs;
    d["warmup"] = r.warmup;
    d["avg_ms"] = r.avg_ms;
    d["p50_ms"] = r.p50_ms;
    d["p95_ms"] = r.p95_ms;
    d["min_ms"] = r.min_ms;
    d["max_ms"] = r.max_ms;
    d["samples_ms"] = r.samples_ms;
    return d;
}

}  // namespace

PYBIND11_MODULE(_flora, m) {
    configure_logging();
    m.doc() = "flora: flower classification with mobile-scale CNNs";

    py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);
    py::register_exception<RequestError>(m, "RequestError", PyExc_ValueError);

    m.def("architecture_names", &architecture_names);
    m.def("optimizer_names", &optimizer_names);
    m.def("count_parameters", &count_parameters_py, py::arg("arch"), py::arg("head") = "gap", py::arg("classes") = 16,
          py::arg("freeze") = 0.0, py::arg("input_size") = py::none(),
          "Total, trainable and non-trainable parameters plus layer and frozen-layer counts.");
    m.def("build_descriptor", &build_descriptor_py, py::arg("arch"), py::arg("input_size") = py::none(),
          py::arg("classes") = 16, py::arg("head") = "gap", "Descriptor JSON text.");
    m.def("macro_metrics", &macro_metrics_py, py::arg("counts"),
          "Macro metrics of a confusion matrix given as rows of actual-class counts.");
    m.def("synth_images", &synth_images_py, py::arg("classes"), py::arg("per_class"), py::arg("size") = 32,
          py::arg("seed") = 0, "Synthetic stripe images as (label, PNG bytes) pairs.");
    m.def("train_synth", &train_synth_py, py::arg("arch"), py::arg("classes"), py::arg("per_class"),
          py::arg("size") = 32, py::arg("optimizer") = "sgd", py::arg("epochs") = 10, py::arg("lr") = py::none(),
          py::arg("seed") = 0, py::arg("freeze") = 0.0, py::arg("out") = "model.ckpt",
          "Trains on a synthetic dataset and writes a checkpoint.");

    py::class_<ModelHandle, std::shared_ptr<ModelHandle>>(m, "ModelHandle")
        .def(py::init([](const std::string& path) { return std::make_shared<ModelHandle>(ModelHandle::load(path)); }),
             py::arg("path"))
        .def_property_readonly("class_names", &ModelHandle::class_names)
        .def_property_readonly("input_size", &ModelHandle::input_size)
        .def_property_readonly("architecture", [](const ModelHandle& h) { return h.descriptor().name; })
        .def("classify", &classify_py, py::arg("image"), py::arg("k") = kDefaultTopK)
        .def("benchmark", &benchmark_py, py::arg("runs") = 100, py::arg("warmup") = 10, py::arg("seed") = 0);
}
