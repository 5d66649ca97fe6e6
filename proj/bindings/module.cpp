#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ecnn/data_io.hpp"
#include "ecnn/errors.hpp"
#include "ecnn/evaluation.hpp"
#include "ecnn/hog.hpp"
#include "ecnn/netspec.hpp"
#include "ecnn/presets.hpp"
#include "ecnn/training.hpp"

namespace py = pybind11;
using namespace ecnn;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor tensor_from(const DoubleArray& a) {
    std::vector<int> shape(static_cast<std::size_t>(a.ndim()));
    for (py::ssize_t i = 0; i < a.ndim(); ++i) {
        shape[static_cast<std::size_t>(i)] = static_cast<int>(a.shape(i));
    }
    std::vector<double> data(a.data(), a.data() + a.size());
    return Tensor(std::move(shape), std::move(data));
}

py::array_t<double> array_from(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> out(shape);
    std::copy(t.data(), t.data() + t.size(), out.mutable_data());
    return out;
}

ArchSpec spec_from(const std::string& arch) {
    return parse_arch(is_preset(arch) ? preset(arch).arch : arch);
}

Tensor maybe_hog(Model& m, const py::object& hog) {
    if (hog.is_none()) return Tensor();
    return tensor_from(hog.cast<DoubleArray>());
}

py::dict history_dict(const History& h) {
    py::dict d;
    d["loss"] = h.loss_per_iteration;
    d["train_acc"] = h.train_acc_per_epoch;
    d["val_acc"] = h.val_acc_per_epoch;
    return d;
}

py::dict dataset_dict(const Dataset& d) {
    py::dict out;
    out["images"] = array_from(d.images);
    out["labels"] = d.labels;
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "CNN engine for facial expression recognition";

    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<ParseError>(m, "ArchParseError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<DataError>(m, "DataError", PyExc_ValueError);

    py::class_<Model>(m, "Model")
        .def_property_readonly("arch", [](const Model& mm) { return arch_to_string(mm.spec); })
        .def_property_readonly("seed", [](const Model& mm) { return mm.seed; })
        .def_property_readonly("num_classes",
                               [](const Model& mm) { return mm.spec.num_classes; })
        .def_property_readonly("hybrid", [](const Model& mm) { return mm.spec.hog_concat; })
        .def_property_readonly("param_count", &Model::param_count)
        .def("parameters",
             [](Model& mm) {
                 py::dict out;
                 for (auto& [name, tensor] : mm.param_map()) {
                     out[py::str(name)] = array_from(*tensor);
                 }
                 return out;
             })
        .def(
            "forward",
            [](Model& mm, const DoubleArray& x, const py::object& hog, bool train) {
                const Tensor xt = tensor_from(x);
                Tensor hg = maybe_hog(mm, hog);
                const Tensor* hp = hg.size() ? &hg : nullptr;
                return array_from(train ? forward(mm, xt, hp, Mode::train)
                                        : forward_eval(mm, xt, hp));
            },
            py::arg("x"), py::arg("hog") = py::none(), py::arg("train") = false)
        .def(
            "predict",
            [](Model& mm, const DoubleArray& x, const py::object& hog) {
                const Tensor xt = tensor_from(x);
                Tensor hg = maybe_hog(mm, hog);
                const Tensor scores = forward_eval(mm, xt, hg.size() ? &hg : nullptr);
                const int k = scores.extent(1);
                std::vector<int> labels(static_cast<std::size_t>(scores.extent(0)));
                for (int i = 0; i < scores.extent(0); ++i) {
                    const double* row = scores.data() + static_cast<std::size_t>(i) * k;
                    int arg = 0;
                    for (int j = 1; j < k; ++j) {
                        if (row[j] > row[arg]) arg = j;
                    }
                    labels[static_cast<std::size_t>(i)] = arg;
                }
                return labels;
            },
            py::arg("x"), py::arg("hog") = py::none())
        .def("save",
             [](const Model& mm, const std::string& path) { save_checkpoint(mm, path); })
        .def_static("load", &load_checkpoint);

    m.def("parse_arch", [](const std::string& text) { return arch_to_string(parse_arch(text)); },
          "validate an architecture string and return its canonical form");
    m.def("preset_arch", [](const std::string& name) { return preset(name).arch; });
    m.def(
        "build_model",
        [](const std::string& arch, std::uint64_t seed) { return build_model(spec_from(arch), seed); },
        py::arg("arch"), py::arg("seed") = 0);

    m.def(
        "softmax_loss",
        [](const DoubleArray& scores, const std::vector<int>& labels) {
            const SoftmaxResult r = softmax_loss(tensor_from(scores), labels);
            return py::make_tuple(r.loss, array_from(r.dscores));
        },
        py::arg("scores"), py::arg("labels"));

    m.def(
        "hog_extract", [](const DoubleArray& img) { return array_from(hog_extract(tensor_from(img))); },
        py::arg("image"));
    m.def(
        "hog_batch",
        [](const DoubleArray& images) { return array_from(hog_batch(tensor_from(images))); },
        py::arg("images"));

    m.def("load_fer_csv", [](const std::string& path) {
        const FerSplits s = load_fer_csv(path);
        py::dict out;
        out["train"] = dataset_dict(s.train);
        out["val"] = dataset_dict(s.val);
        out["test"] = dataset_dict(s.test);
        return out;
    });
    m.def(
        "make_synthetic_splits",
        [](int n_train, int n_val, int n_test, std::uint64_t seed) {
            const FerSplits s = make_synthetic_splits(n_train, n_val, n_test, seed);
            py::dict out;
            out["train"] = dataset_dict(s.train);
            out["val"] = dataset_dict(s.val);
            out["test"] = dataset_dict(s.test);
            return out;
        },
        py::arg("n_train"), py::arg("n_val"), py::arg("n_test"), py::arg("seed") = 0);

    m.def(
        "evaluate",
        [](Model& mm, const DoubleArray& images, const std::vector<int>& labels,
           const py::object& hog) {
            Dataset d;
            d.images = tensor_from(images);
            d.labels = labels;
            Tensor hg = maybe_hog(mm, hog);
            const EvalResult r = evaluate(mm, d, hg.size() ? &hg : nullptr);
            py::array_t<std::int64_t> cm({r.cm.k, r.cm.k});
            std::copy(r.cm.counts.begin(), r.cm.counts.end(), cm.mutable_data());
            return py::make_tuple(r.accuracy, cm);
        },
        py::arg("model"), py::arg("images"), py::arg("labels"), py::arg("hog") = py::none());

    m.def(
        "train",
        [](const std::string& arch, const DoubleArray& train_x, const std::vector<int>& train_y,
           const DoubleArray& val_x, const std::vector<int>& val_y, double lr, double reg,
           int epochs, int batch, double momentum, std::uint64_t seed) {
            const ArchSpec spec = spec_from(arch);
            TrainData data;
            data.train.images = tensor_from(train_x);
            data.train.labels = train_y;
            data.train.split = Split::train;
            data.val.images = tensor_from(val_x);
            data.val.labels = val_y;
            data.val.split = Split::val;
            if (spec.hog_concat) {
                data.train_hog = hog_batch(data.train.images);
                data.val_hog = hog_batch(data.val.images);
            }
            TrainConfig cfg;
            cfg.lr = lr;
            cfg.reg = reg;
            cfg.epochs = epochs;
            cfg.batch = batch;
            cfg.momentum = momentum;
            cfg.seed = seed;
            cfg.hybrid = spec.hog_concat;
            TrainResult r = train(spec, cfg, data);
            return py::make_tuple(std::move(r.best), history_dict(r.history));
        },
        py::arg("arch"), py::arg("train_x"), py::arg("train_y"), py::arg("val_x"),
        py::arg("val_y"), py::arg("lr") = 1e-3, py::arg("reg") = 0.0, py::arg("epochs") = 1,
        py::arg("batch") = 128, py::arg("momentum") = 0.0, py::arg("seed") = 0);

    m.def(
        "sanity_initial_loss",
        [](const std::string& arch, std::uint64_t seed) {
            const InitialLossReport r = sanity_initial_loss(spec_from(arch), seed);
            return py::make_tuple(r.pass, r.measured, r.target);
        },
        py::arg("arch"), py::arg("seed") = 0);

    m.def(
        "grad_check",
        [](const std::string& arch, int n_samples, double step, std::uint64_t seed) {
            return grad_check(spec_from(arch), n_samples, step, seed).group_max_rel_err;
        },
        py::arg("arch"), py::arg("n_samples") = 2, py::arg("step") = 1e-5, py::arg("seed") = 0);
}
