#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "cortex3d/cae.hpp"
#include "cortex3d/cli.hpp"
#include "cortex3d/data.hpp"
#include "cortex3d/error.hpp"
#include "cortex3d/eval.hpp"

namespace py = pybind11;
using namespace cortex3d;

namespace {

template <typename T>
using CArray = py::array_t<T, py::array::c_style | py::array::forcecast>;

template <typename T>
BasicTensor<T> to_tensor(const CArray<T>& a) {
    std::vector<std::size_t> dims(a.shape(), a.shape() + a.ndim());
    return BasicTensor<T>(Shape(dims), std::vector<T>(a.data(), a.data() + a.size()));
}

template <typename T>
py::array_t<T> to_array(const BasicTensor<T>& t) {
    const auto e = t.shape().extents();
    py::array_t<T> out(std::vector<py::ssize_t>(e.begin(), e.end()));
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

py::dict metrics_dict(const Metrics& m) {
    py::list folds;
    for (const auto& f : m.folds) {
        py::dict d;
        d["fold"] = f.fold;
        d["train_size"] = f.train_size;
        d["test_size"] = f.test_size;
        d["accuracy"] = f.accuracy;
        d["confusion"] = f.confusion;
        folds.append(d);
    }
    py::dict d;
    d["task"] = m.task;
    d["accuracy"] = m.accuracy;
    d["recall"] = m.recall;
    d["confusion"] = m.confusion;
    d["mean_accuracy"] = m.mean_accuracy;
    d["std_accuracy"] = m.std_accuracy;
    d["folds"] = folds;
    d["aborted"] = m.aborted;
    d["error"] = m.error;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "3D convolutional autoencoder pretraining and ACNN classification";

    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);

    m.def(
        "conv3d",
        [](const CArray<double>& x, const CArray<double>& w, const std::string& mode) {
            return to_array(conv3d(to_tensor(x), to_tensor(w), mode == "valid" ? ConvMode::valid : ConvMode::full));
        },
        py::arg("x"), py::arg("kernels"), py::arg("mode") = "full",
        "3D cross-correlation of a [J,D,H,W] input with [K,J,n,n,n] kernels.");

    m.def(
        "stack_output_shapes",
        [](const std::vector<std::size_t>& input, const std::vector<std::size_t>& feature_maps,
           std::size_t kernel_size, std::size_t pool) {
            const auto stack = CaeStack<float>::build(input.at(0), feature_maps, kernel_size, {pool, pool}, 0);
            std::vector<std::vector<std::size_t>> out;
            for (const auto& s : stack_output_shapes(stack, Shape(input)))
                out.emplace_back(s.extents().begin(), s.extents().end());
            return out;
        },
        py::arg("input_shape"), py::arg("feature_maps"), py::arg("kernel_size") = 3, py::arg("pool") = 2,
        "Pooled feature-map shape of every CAE layer for an input shape.");

    m.def(
        "generate_phantom",
        [](const std::string& label, std::uint64_t seed, std::size_t grid, double noise_sigma) {
            PhantomParams p;
            p.grid = grid;
            p.noise_sigma = noise_sigma;
            p.seed = seed;
            return to_array(generate_phantom(p, parse_raw_label(label)).tensor);
        },
        py::arg("label"), py::arg("seed") = 0, py::arg("grid") = 32, py::arg("noise_sigma") = 0.05,
        "One [1,G,G,G] float32 phantom for label AD, MCI or NC.");

    m.def(
        "write_vol", [](const CArray<float>& a, const std::filesystem::path& p) { write_vol(to_tensor(a), p); },
        py::arg("array"), py::arg("path"));
    m.def(
        "read_vol", [](const std::filesystem::path& p) { return to_array(read_vol(p)); }, py::arg("path"));

    m.def(
        "stratified_kfold",
        [](const std::vector<std::string>& ids, const std::vector<std::size_t>& classes, std::size_t k,
           std::uint64_t seed) { return stratified_kfold(ids, classes, k, seed).folds; },
        py::arg("subject_ids"), py::arg("classes"), py::arg("k"), py::arg("seed") = 0);

    m.def(
        "read_report", [](const std::filesystem::path& p) { return metrics_dict(read_report(p)); },
        py::arg("path"), "JSON report as a dict; accuracies are recomputed from the confusion counts.");

    m.def(
        "run",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            const int code = run(args, out, err);
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Run a CLI subcommand in-process; returns (exit_code, stdout, stderr).");
}
