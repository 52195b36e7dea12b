#include "smartcal/calibrators.hpp"
#include "smartcal/dataio.hpp"
#include "smartcal/errors.hpp"
#include "smartcal/metrics.hpp"
#include "smartcal/softbin.hpp"
#include "smartcal/tempnet.hpp"
#include "smartcal/theory.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace smartcal;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using LabelArray = py::array_t<std::uint32_t, py::array::c_style | py::array::forcecast>;

LogitSet to_set(const FloatArray &logits, const LabelArray &labels)
{
    if (logits.ndim() != 2)
        throw DataError("logits must be a 2-D array");
    if (labels.ndim() != 1 || labels.shape(0) != logits.shape(0))
        throw DataError("labels must be a 1-D array with one entry per row");
    LogitSet set;
    set.n = static_cast<std::size_t>(logits.shape(0));
    set.k = static_cast<std::size_t>(logits.shape(1));
    set.logits.assign(logits.data(), logits.data() + logits.size());
    set.labels.assign(labels.data(), labels.data() + labels.size());
    set.validate();
    return set;
}

ProbSet to_probs(const DoubleArray &probs, const LabelArray &labels)
{
    if (probs.ndim() != 2)
        throw DataError("probabilities must be a 2-D array");
    if (labels.ndim() != 1 || labels.shape(0) != probs.shape(0))
        throw DataError("labels must be a 1-D array with one entry per row");
    ProbSet p;
    p.n = static_cast<std::size_t>(probs.shape(0));
    p.k = static_cast<std::size_t>(probs.shape(1));
    p.probs.assign(probs.data(), probs.data() + probs.size());
    p.labels.assign(labels.data(), labels.data() + labels.size());
    p.validate();
    return p;
}

LogitSet unlabeled(const FloatArray &logits)
{
    if (logits.ndim() != 2)
        throw DataError("logits must be a 2-D array");
    LogitSet set;
    set.n = static_cast<std::size_t>(logits.shape(0));
    set.k = static_cast<std::size_t>(logits.shape(1));
    set.logits.assign(logits.data(), logits.data() + logits.size());
    set.labels.assign(set.n, 0);
    set.validate();
    return set;
}

py::array_t<double> matrix(const std::vector<double> &values, std::size_t rows, std::size_t cols)
{
    py::array_t<double> out({rows, cols});
    std::copy(values.begin(), values.end(), out.mutable_data());
    return out;
}

py::tuple from_set(const LogitSet &set)
{
    py::array_t<float> logits({set.n, set.k});
    std::copy(set.logits.begin(), set.logits.end(), logits.mutable_data());
    py::array_t<std::uint32_t> labels(std::vector<py::ssize_t>{static_cast<py::ssize_t>(set.n)});
    std::copy(set.labels.begin(), set.labels.end(), labels.mutable_data());
    return py::make_tuple(logits, labels);
}

py::array_t<double> vector_array(const std::vector<double> &values)
{
    py::array_t<double> out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(values.size())});
    std::copy(values.begin(), values.end(), out.mutable_data());
    return out;
}

std::vector<double> to_vector(const DoubleArray &a)
{
    return {a.data(), a.data() + a.size()};
}

py::list bin_rows(const std::vector<BinRow> &rows)
{
    py::list out;
    for (const auto &b : rows) {
        py::dict d;
        d["bin"] = b.bin;
        d["lo"] = b.lo;
        d["hi"] = b.hi;
        d["count"] = b.count;
        d["conf"] = b.conf;
        d["acc"] = b.acc;
        out.append(d);
    }
    return out;
}

TrainConfig make_config(const std::string &loss, std::size_t epochs, double lr, const std::string &optimizer,
                        std::uint64_t seed, std::size_t bins, double alpha, double q, std::size_t hidden,
                        const std::string &indicator)
{
    TrainConfig cfg;
    cfg.loss = loss_from_string(loss);
    cfg.epochs = epochs;
    cfg.learning_rate = lr;
    cfg.optimizer = optimizer_from_string(optimizer);
    cfg.seed = seed;
    cfg.softbin = {bins, alpha, q};
    cfg.hidden = hidden;
    cfg.indicator = indicator_from_string(indicator);
    return cfg;
}

} // namespace

PYBIND11_MODULE(_smartcal, m)
{
    m.doc() = "Logit-gap temperature calibration, soft-binned calibration error and calibration metrics";

    py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
    py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    m.def("load_logits", [](const std::string &path) { return from_set(load_logits(path)); }, py::arg("path"),
          "Load (logits float32 [N, K], labels uint32 [N]) from a .csv or binary file.");
    m.def("save_logits", [](const FloatArray &logits, const LabelArray &labels, const std::string &path) {
        save_logits(to_set(logits, labels), path);
    }, py::arg("logits"), py::arg("labels"), py::arg("path"));

    m.def("softmax_rows", [](const FloatArray &logits) {
        const ProbSet p = softmax_rows(unlabeled(logits));
        return matrix(p.probs, p.n, p.k);
    }, py::arg("logits"));

    m.def("logit_gap", [](const DoubleArray &z) {
        const auto v = to_vector(z);
        return logit_gap(std::span<const double>(v));
    }, py::arg("z"));

    m.def("ece", [](const DoubleArray &probs, const LabelArray &labels, std::size_t bins) {
        const auto r = ece(to_probs(probs, labels), bins);
        return py::make_tuple(r.value, bin_rows(r.bins));
    }, py::arg("probs"), py::arg("labels"), py::arg("bins") = kDefaultBins);
    m.def("adaece", [](const DoubleArray &probs, const LabelArray &labels, std::size_t bins) {
        return adaece(to_probs(probs, labels), bins);
    }, py::arg("probs"), py::arg("labels"), py::arg("bins") = kDefaultBins);
    m.def("classwise_ece", [](const DoubleArray &probs, const LabelArray &labels, std::size_t bins) {
        return classwise_ece(to_probs(probs, labels), bins);
    }, py::arg("probs"), py::arg("labels"), py::arg("bins") = kDefaultBins);
    m.def("nll", [](const DoubleArray &probs, const LabelArray &labels) { return nll(to_probs(probs, labels)); },
          py::arg("probs"), py::arg("labels"));
    m.def("brier", [](const DoubleArray &probs, const LabelArray &labels) { return brier(to_probs(probs, labels)); },
          py::arg("probs"), py::arg("labels"));
    m.def("accuracy", [](const DoubleArray &probs, const LabelArray &labels) {
        return accuracy(to_probs(probs, labels));
    }, py::arg("probs"), py::arg("labels"));
    m.def("evaluate", [](const DoubleArray &probs, const LabelArray &labels, std::size_t bins) {
        const auto r = evaluate(to_probs(probs, labels), bins);
        py::dict d;
        d["ece"] = r.ece;
        d["adaece"] = r.adaece;
        d["cece"] = r.cece;
        d["nll"] = r.nll;
        d["brier"] = r.brier;
        d["accuracy"] = r.accuracy;
        d["bins"] = bin_rows(r.bins);
        return d;
    }, py::arg("probs"), py::arg("labels"), py::arg("bins") = kDefaultBins);

    m.def("membership", [](const DoubleArray &conf, std::size_t bins, double alpha) {
        const auto c = to_vector(conf);
        return matrix(membership(c, {bins, alpha, 1.0}), c.size(), bins);
    }, py::arg("conf"), py::arg("bins") = 15, py::arg("alpha") = 50.0);
    m.def("soft_ece", [](const DoubleArray &conf, const DoubleArray &correct, std::size_t bins, double alpha, double q) {
        return soft_ece(to_vector(conf), to_vector(correct), {bins, alpha, q});
    }, py::arg("conf"), py::arg("correct"), py::arg("bins") = 15, py::arg("alpha") = 50.0, py::arg("q") = 1.0);
    m.def("soft_ece_grad", [](const DoubleArray &conf, const DoubleArray &correct, std::size_t bins, double alpha,
                              double q) {
        const auto g = soft_ece_grad(to_vector(conf), to_vector(correct), {bins, alpha, q});
        return py::make_tuple(g.value, vector_array(g.grad));
    }, py::arg("conf"), py::arg("correct"), py::arg("bins") = 15, py::arg("alpha") = 50.0, py::arg("q") = 1.0);

    m.def("solve_temperature", [](const DoubleArray &z, double p) {
        const auto v = to_vector(z);
        return solve_temperature(v, p);
    }, py::arg("z"), py::arg("target_p"), "Bisection temperature for a target top-class probability, or None.");
    m.def("uniform_gap_temperature", &uniform_gap_temperature, py::arg("delta"), py::arg("k"), py::arg("target_p"));
    m.def("check_bounds", [](const DoubleArray &z, double p) {
        const auto v = to_vector(z);
        const auto r = check_bounds(v, p);
        py::dict d;
        d["g"] = r.gap;
        d["p"] = r.target_p;
        d["K"] = r.k;
        d["T"] = r.temperature;
        d["lower"] = r.lower;
        d["upper"] = r.upper;
        d["ok"] = r.within_bounds;
        return d;
    }, py::arg("z"), py::arg("target_p"));

    m.def("synthesize", [](std::size_t n, std::size_t k, std::uint64_t seed, double scale, const std::string &distortion,
                           double t, double lo, double hi, double mid, double width) {
        SynthConfig cfg;
        cfg.n = n;
        cfg.k = k;
        cfg.seed = seed;
        cfg.scale = scale;
        cfg.distortion.kind = distortion_kind_from_string(distortion);
        cfg.distortion.value = t;
        cfg.distortion.lo = lo;
        cfg.distortion.hi = hi;
        cfg.distortion.mid = mid;
        cfg.distortion.width = width;
        const auto [clean, distorted] = synthesize(cfg);
        return py::make_tuple(from_set(clean), from_set(distorted));
    }, py::arg("n"), py::arg("k"), py::arg("seed") = 0, py::arg("scale") = 4.0, py::arg("distortion") = "logistic",
       py::arg("t") = 1.0, py::arg("lo") = 0.6, py::arg("hi") = 1.8, py::arg("mid") = 4.0, py::arg("width") = 1.0,
       "Returns ((clean_logits, labels), (distorted_logits, labels)).");

    py::class_<CalibratorModel>(m, "CalibratorModel")
        .def_static("global_temperature", &CalibratorModel::global, py::arg("T"))
        .def_static("from_json", &model_from_json, py::arg("text"))
        .def_static("load", [](const std::string &path) { return load_model(path); }, py::arg("path"))
        .def("to_json", &model_to_json)
        .def("save", [](const CalibratorModel &model, const std::string &path) { save_model(model, path); },
             py::arg("path"))
        .def_property_readonly("method", [](const CalibratorModel &model) { return std::string(to_string(model.method)); })
        .def_property_readonly("temperature", [](const CalibratorModel &model) { return model.temperature; })
        .def_property_readonly("parameter_count", [](const CalibratorModel &model) {
            return model.method == Method::smart ? model.net.parameter_count() : std::size_t{1};
        })
        .def("temperatures", [](const CalibratorModel &model, const FloatArray &logits) {
            const auto t = temperatures(model, unlabeled(logits));
            return vector_array(t);
        }, py::arg("logits"))
        .def("apply", [](const CalibratorModel &model, const FloatArray &logits) {
            const ProbSet p = apply(model, unlabeled(logits));
            return matrix(p.probs, p.n, p.k);
        }, py::arg("logits"), "Calibrated probabilities for a logit matrix.");

    auto train_fn = [](Method method) {
        return [method](const FloatArray &logits, const LabelArray &labels, const std::string &loss, std::size_t epochs,
                        double lr, const std::string &optimizer, std::uint64_t seed, std::size_t bins, double alpha,
                        double q, std::size_t hidden, const std::string &indicator) {
            const LogitSet set = to_set(logits, labels);
            const auto cfg = make_config(loss, epochs, lr, optimizer, seed, bins, alpha, q, hidden, indicator);
            TrainResult res = train(method, set, cfg);
            return py::make_tuple(res.model, res.losses);
        };
    };
    m.def("train_smart", train_fn(Method::smart), py::arg("logits"), py::arg("labels"), py::arg("loss") = "softece",
          py::arg("epochs") = 300, py::arg("lr") = 1e-2, py::arg("optimizer") = "adam", py::arg("seed") = 0,
          py::arg("bins") = 15, py::arg("alpha") = 50.0, py::arg("q") = 1.0, py::arg("hidden") = kDefaultHidden,
          py::arg("indicator") = "gap", "Train a per-sample temperature net; returns (model, losses).");
    m.def("train_ts", train_fn(Method::ts), py::arg("logits"), py::arg("labels"), py::arg("loss") = "softece",
          py::arg("epochs") = 300, py::arg("lr") = 1e-2, py::arg("optimizer") = "adam", py::arg("seed") = 0,
          py::arg("bins") = 15, py::arg("alpha") = 50.0, py::arg("q") = 1.0, py::arg("hidden") = kDefaultHidden,
          py::arg("indicator") = "gap", "Search a global temperature; returns (model, objective trace).");
}
