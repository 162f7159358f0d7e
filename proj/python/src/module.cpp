#include "cli.hpp"
#include "stalt/analysis.hpp"
#include "stalt/delta.hpp"
#include "stalt/error.hpp"
#include "stalt/evalstats.hpp"
#include "stalt/grader.hpp"
#include "stalt/metrics.hpp"
#include "stalt/trajstore.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cmath>
#include <sstream>

namespace py = pybind11;
using namespace stalt;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_array(const Grid& g) {
    Array out({g.rows, g.cols});
    std::copy(g.values.begin(), g.values.end(), out.mutable_data());
    return out;
}

Grid to_grid(const Array& a) {
    if (a.ndim() != 2) throw Error("expected a 2-D array");
    Grid g(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
    std::copy(a.data(), a.data() + a.size(), g.values.begin());
    return g;
}

std::vector<double> to_vector(const Array& a) {
    if (a.ndim() != 1) throw Error("expected a 1-D array");
    return {a.data(), a.data() + a.size()};
}

// 0 selects the hard limit and inf the uniform limit.
metrics::Temperature temperature(double tau) {
    if (tau == 0.0) return metrics::Temperature::zero();
    if (std::isinf(tau) && tau > 0) return metrics::Temperature::infinity();
    return metrics::Temperature::of(tau);
}

trajstore::HiddenTrajectory to_trajectory(const Array& a, const std::string& dtype) {
    if (a.ndim() != 3) throw Error("expected a (T, L+1, D) array");
    trajstore::HiddenTrajectory h;
    h.shape = {static_cast<std::uint64_t>(a.shape(0)), static_cast<std::uint64_t>(a.shape(1)),
               static_cast<std::uint64_t>(a.shape(2)), trajstore::parse_dtype(dtype)};
    h.values.assign(a.data(), a.data() + a.size());
    return h;
}

evalstats::LabeledScores labeled(const Array& scores, const std::vector<bool>& labels) {
    evalstats::LabeledScores d;
    d.scores = to_vector(scores);
    d.labels = labels;
    d.check();
    return d;
}

evalstats::Statistic named_statistic(const std::string& name) {
    if (name == "auroc") return [](const evalstats::LabeledScores& s) { return evalstats::auroc(s); };
    if (name == "fpr95") return [](const evalstats::LabeledScores& s) { return evalstats::fpr_at_tpr(s); };
    if (name == "aupr") return [](const evalstats::LabeledScores& s) { return evalstats::aupr(s); };
    if (name == "hedges_g") return [](const evalstats::LabeledScores& s) { return evalstats::hedges_g(s); };
    throw Error("unknown statistic '" + name + "'");
}

py::dict delta_dict(const delta::DeltaResult& r) {
    py::dict out;
    out["dt"] = to_array(*r.dt);
    out["dl"] = to_array(*r.dl);
    out["ct"] = to_array(*r.ct);
    out["cl"] = to_array(*r.cl);
    out["summary"] = to_array(*r.summary);
    out["degenerate_cosines"] = r.degenerate_cosines;
    return out;
}

}  // namespace

PYBIND11_MODULE(_stalt, m) {
    m.doc() = "Hidden-state trajectory scoring and evaluation";
    py::register_exception<Error>(m, "StaltError", PyExc_ValueError);

    m.def(
        "read_trajectory",
        [](const std::filesystem::path& path) {
            const auto h = trajstore::read_trajectory_file(path);
            Array out({h.shape.tokens, h.shape.layers, h.shape.width});
            std::copy(h.values.begin(), h.values.end(), out.mutable_data());
            return py::make_tuple(out, std::string(trajstore::dtype_name(h.shape.dtype)));
        },
        py::arg("path"), "Read an STRJ file; returns (array of shape (T, L+1, D), dtype name).");
    m.def(
        "write_trajectory",
        [](const std::filesystem::path& path, const Array& states, const std::string& dtype) {
            trajstore::write_trajectory_file(to_trajectory(states, dtype), path);
        },
        py::arg("path"), py::arg("states"), py::arg("dtype") = "f32");

    m.def(
        "deltas",
        [](const Array& states) {
            return delta_dict(delta::compute(to_trajectory(states, "f32"), delta::Products::all()));
        },
        py::arg("states"), "dt, dl, ct, cl and the layer summary of a (T, L+1, D) array, computed in 64-bit.");
    m.def(
        "trajectory_deltas",
        [](const std::filesystem::path& path) {
            auto in = trajstore::open_input(path);
            trajstore::TrajectoryReader reader(in);
            return delta_dict(delta::compute(reader, delta::Products::all()));
        },
        py::arg("path"), "Streamed delta products of an STRJ file.");

    m.def(
        "layer_weights",
        [](const Array& row, double tau) { return metrics::layer_weights(to_vector(row), temperature(tau)); },
        py::arg("row"), py::arg("tau") = 1.0);
    m.def(
        "stalt",
        [](const Array& dt, const Array& dl, double tau) {
            return metrics::stalt(delta::align(to_grid(dt), to_grid(dl)), temperature(tau));
        },
        py::arg("dt"), py::arg("dl"), py::arg("tau") = 1.0, "StALT from full dt and dl grids.");
    m.def(
        "stalt_reversed",
        [](const Array& dt, const Array& dl, double tau) {
            return metrics::stalt_reversed(delta::align(to_grid(dt), to_grid(dl)), temperature(tau));
        },
        py::arg("dt"), py::arg("dl"), py::arg("tau") = 1.0);
    m.def("coe_r", [](const Array& summary) { return metrics::coe_r(to_grid(summary)); }, py::arg("summary"));
    m.def("coe_c", [](const Array& summary) { return metrics::coe_c(to_grid(summary)); }, py::arg("summary"));

    m.def(
        "auroc", [](const Array& s, const std::vector<bool>& y) { return evalstats::auroc(labeled(s, y)); },
        py::arg("scores"), py::arg("labels"));
    m.def(
        "fpr_at_tpr",
        [](const Array& s, const std::vector<bool>& y, double target) {
            return evalstats::fpr_at_tpr(labeled(s, y), target);
        },
        py::arg("scores"), py::arg("labels"), py::arg("tpr_target") = 0.95);
    m.def(
        "aupr", [](const Array& s, const std::vector<bool>& y) { return evalstats::aupr(labeled(s, y)); },
        py::arg("scores"), py::arg("labels"));
    m.def(
        "hedges_g",
        [](const Array& correct, const Array& incorrect) {
            return evalstats::hedges_g(to_vector(correct), to_vector(incorrect));
        },
        py::arg("correct"), py::arg("incorrect"));
    m.def(
        "bootstrap_ci",
        [](const std::string& statistic, const Array& s, const std::vector<bool>& y, std::size_t resamples,
           double level, std::uint64_t seed, std::size_t workers) {
            const auto stat = named_statistic(statistic);
            const auto data = labeled(s, y);
            evalstats::Interval ci;
            {
                py::gil_scoped_release release;
                ci = evalstats::bootstrap_ci(stat, data, {resamples, level, seed, workers});
            }
            return py::make_tuple(ci.lo, ci.hi);
        },
        py::arg("statistic"), py::arg("scores"), py::arg("labels"), py::arg("resamples") = 4000,
        py::arg("level") = 0.95, py::arg("seed") = 0, py::arg("workers") = 1,
        "Percentile interval for 'auroc', 'fpr95', 'aupr' or 'hedges_g'.");

    m.def(
        "validate",
        [](const std::filesystem::path& manifest, bool deep) {
            const auto mf = trajstore::load_manifest(manifest);
            const auto report = trajstore::validate_dataset(mf.records, {.deep = deep});
            std::vector<std::tuple<std::string, std::string, std::string>> out;
            for (const auto& e : report.errors) out.emplace_back(e.record_id, e.check, e.message);
            return out;
        },
        py::arg("manifest"), py::arg("deep") = false, "List of (record id, check, message); empty when valid.");
    m.def(
        "score",
        [](const std::filesystem::path& manifest, const std::string& metric_list, std::size_t workers) {
            const auto mf = trajstore::load_manifest(manifest);
            const auto configs = metrics::parse_metric_list(metric_list);
            metrics::ScoreTable table;
            {
                py::gil_scoped_release release;
                table = metrics::score_dataset(mf.records, configs, {.workers = workers});
            }
            py::list rows;
            for (const auto& r : table.rows) {
                py::dict row;
                row["record_id"] = r.record_id;
                row["label"] = r.label;
                row["length"] = r.length;
                row["group"] = r.group;
                for (std::size_t k = 0; k < table.metrics.size(); ++k) row[py::str(table.metrics[k])] = r.scores[k];
                row["errors"] = r.errors;
                rows.append(row);
            }
            return rows;
        },
        py::arg("manifest"), py::arg("metrics") = "stalt", py::arg("workers") = 1,
        "One dict per record with a key per metric label (None when the metric failed).");
    m.def(
        "synth",
        [](const std::filesystem::path& out_dir, const std::string& preset, std::size_t n, std::uint64_t seed) {
            auto spec = analysis::synth_preset(preset);
            spec.n = n;
            spec.seed = seed;
            return analysis::synth_cohort(spec, out_dir).manifest_path;
        },
        py::arg("out_dir"), py::arg("preset") = "hotspot", py::arg("n") = 200, py::arg("seed") = 7,
        "Write a synthetic cohort; returns the manifest path.");
    m.def(
        "grade",
        [](const std::string& text, const std::string& gold, const std::string& mode) {
            return grader::grade(text, gold, grader::parse_mode(mode));
        },
        py::arg("text"), py::arg("gold"), py::arg("mode") = "boxed", "True/False, or None when no answer was found.");
    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            const int code = cli::run(args, out, err);
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Run a CLI subcommand in-process; returns (exit code, stdout, stderr).");
}
