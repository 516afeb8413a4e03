// Python bindings over the runner-level operations. Everything returns plain
// dicts so callers stay decoupled from the C++ structs.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <vector>

#include "mlcil/errors.hpp"
#include "mlcil/labels.hpp"
#include "mlcil/metrics.hpp"
#include "mlcil/runner.hpp"
#include "mlcil/tensor.hpp"

namespace py = pybind11;
using namespace mlcil;

namespace {

RunnerConfig resolve(const std::string& config_path, std::optional<std::uint64_t> seed,
                     std::optional<std::size_t> mper, std::optional<double> alpha,
                     std::optional<double> beta, std::optional<std::string> protocol) {
    auto cfg = load_config(config_path);
    CliOverrides o;
    o.seed = seed;
    o.mper = mper;
    o.alpha = alpha;
    o.beta = beta;
    o.protocol = protocol;
    apply_overrides(cfg, o);
    return cfg;
}

py::dict metrics_dict(const MetricsSummary& m) {
    py::dict d;
    d["map"] = m.map;
    d["cf1"] = m.cf1;
    d["of1"] = m.of1;
    d["per_class_ap"] = m.per_class_ap;
    d["skipped_classes"] = m.skipped_classes;
    d["samples"] = m.samples;
    d["classes"] = m.classes;
    return d;
}

py::dict report_dict(const SessionReport& r) {
    py::dict d;
    d["session"] = r.session;
    d["classes_seen"] = r.classes_seen;
    d["train_samples"] = r.train_samples;
    d["replay_samples"] = r.replay_samples;
    d["pseudo_filled"] = r.pseudo_filled;
    d["buffer_total"] = r.buffer_total;
    d["steps"] = r.steps;
    d["mean_ce"] = r.mean_ce;
    d["mean_mc"] = r.mean_mc;
    d["mean_kd"] = r.mean_kd;
    d["mean_total"] = r.mean_total;
    d["metrics"] = metrics_dict(r.metrics);
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "class-incremental multi-label learning core";
    m.attr("__version__") = "0.1.0";

    py::register_exception<DataError>(m, "DataError");
    py::register_exception<CheckError>(m, "CheckError");

    m.def(
        "gen",
        [](const std::string& out, const std::string& config, std::optional<std::uint64_t> seed,
           std::optional<std::string> protocol) {
            auto got = cmd_gen(resolve(config, seed, {}, {}, {}, protocol), out);
            py::dict d;
            d["manifest"] = got.manifest_path;
            d["train_samples"] = got.train_samples;
            d["test_samples"] = got.test_samples;
            return d;
        },
        py::arg("out"), py::arg("config") = "", py::arg("seed") = py::none(),
        py::arg("protocol") = py::none(),
        "Generate a synthetic patch-feature stream into a directory.");

    m.def(
        "train",
        [](const std::string& out, const std::string& config, const std::string& data,
           std::optional<std::uint64_t> seed, std::optional<std::size_t> mper,
           std::optional<double> alpha, std::optional<double> beta,
           std::optional<std::string> protocol) {
            auto got = cmd_train(resolve(config, seed, mper, alpha, beta, protocol), data, out);
            py::list reports;
            for (const auto& r : got.reports) reports.append(report_dict(r));
            py::dict d;
            d["session_map"] = got.summary.session_map;
            d["average_map"] = got.summary.average_map;
            d["final_map"] = got.summary.final_map;
            d["reports"] = reports;
            d["report_path"] = got.report_path;
            d["summary_path"] = got.summary_path;
            return d;
        },
        py::arg("out"), py::arg("config") = "", py::arg("data") = "",
        py::arg("seed") = py::none(), py::arg("mper") = py::none(),
        py::arg("alpha") = py::none(), py::arg("beta") = py::none(),
        py::arg("protocol") = py::none(),
        "Run the full incremental protocol; empty data means generate in memory.");

    m.def(
        "eval_checkpoint",
        [](const std::string& checkpoint, const std::string& data, const std::string& out) {
            auto got = cmd_eval(checkpoint, data, out);
            py::dict d;
            d["session"] = got.session;
            d["metrics"] = metrics_dict(got.metrics);
            d["report_path"] = got.report_path;
            return d;
        },
        py::arg("checkpoint"), py::arg("data"), py::arg("out"),
        "Evaluate a saved checkpoint on the cumulative test split of a data directory.");

    m.def(
        "gradcheck",
        [](std::size_t dim, std::size_t patches, std::size_t classes, std::size_t heads,
           std::size_t batch, std::uint64_t seed) {
            auto got = run_gradcheck(dim, patches, classes, heads, batch, seed);
            py::dict d;
            d["max_rel_err"] = got.max_rel_err;
            d["worst_param"] = got.worst_param;
            d["checked"] = got.checked;
            return d;
        },
        py::arg("dim") = 8, py::arg("patches") = 4, py::arg("classes") = 3,
        py::arg("heads") = 2, py::arg("batch") = 4, py::arg("seed") = 1,
        "Finite-difference check of the full model and loss against the tape.");

    m.def("average_precision", &average_precision, py::arg("scores"), py::arg("relevant"),
          "AP for one ranked list; relevant is 0/1 per sample.");

    m.def(
        "evaluate_predictions",
        [](const std::vector<std::vector<double>>& probs,
           const std::vector<std::vector<int>>& truth, double threshold) {
            require(!probs.empty() && !probs[0].empty(), "evaluate_predictions: empty input");
            require(probs.size() == truth.size(),
                    "evaluate_predictions: probs and truth row counts differ");
            const std::size_t n = probs.size(), c = probs[0].size();
            std::vector<double> vals;
            vals.reserve(n * c);
            LabelMatrix lm(n, c);
            for (std::size_t i = 0; i < n; ++i) {
                require(probs[i].size() == c && truth[i].size() == c,
                        "evaluate_predictions: ragged rows");
                for (std::size_t j = 0; j < c; ++j) {
                    vals.push_back(probs[i][j]);
                    lm.set(i, j, static_cast<std::int8_t>(truth[i][j]));
                }
            }
            return metrics_dict(evaluate_predictions(Tensor::from_data({n, c}, vals), lm,
                                                     threshold));
        },
        py::arg("probs"), py::arg("truth"), py::arg("threshold") = 0.5,
        "mAP/CF1/OF1 for a score matrix against {-1, 0, 1} supervision.");

    m.def("config_json", [](const std::string& path) { return config_json(load_config(path)); },
          py::arg("config") = "", "Canonical JSON echo of a config file (defaults if empty).");
}
