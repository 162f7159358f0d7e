#include "cli.hpp"

#include "stalt/analysis.hpp"
#include "stalt/csv.hpp"
#include "stalt/delta.hpp"
#include "stalt/error.hpp"
#include "stalt/evalstats.hpp"
#include "stalt/grader.hpp"
#include "stalt/metrics.hpp"
#include "stalt/parallel.hpp"
#include "stalt/score_csv.hpp"
#include "stalt/trajstore.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>

namespace stalt::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using trajstore::Manifest;

struct Streams {
    std::ostream& out;
    std::ostream& err;
};

std::string safe_file_stem(const std::string& id) {
    std::string s = id;
    for (char& c : s) {
        const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
        if (!ok) c = '_';
    }
    if (s.empty() || s == "." || s == "..") s = "_" + s;
    return s;
}

void write_text(const fs::path& path, const std::string& text) {
    auto out = trajstore::open_output(path);
    out << text;
    out.close();
    if (!out) throw Error("cannot write " + path.string());
}

std::string opt_number(const std::optional<double>& v) { return v ? csv::format_double(*v) : ""; }

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::size_t resolve_workers(std::size_t requested) { return requested == 0 ? default_workers() : requested; }

// ---------------------------------------------------------------------------

struct ValidateArgs {
    std::string manifest;
    bool deep = false;
};

int cmd_validate(const ValidateArgs& a, Streams io) {
    const Manifest m = trajstore::load_manifest(a.manifest);
    const auto report = trajstore::validate_dataset(m.records, {.deep = a.deep});
    for (const auto& e : report.errors) io.err << e.record_id << ": " << e.check << ": " << e.message << '\n';
    io.out << "records checked: " << report.records_checked << ", errors: " << report.errors.size() << '\n';
    return report.valid() ? kExitOk : kExitFailure;
}

struct DeltasArgs {
    std::string manifest;
    std::string out;
    std::size_t workers = 0;
};

int cmd_deltas(const DeltasArgs& a, Streams io) {
    Manifest m = trajstore::load_manifest(a.manifest);
    const fs::path out_dir = fs::absolute(a.out);
    const std::size_t n = m.records.size();
    std::vector<std::string> failures(n);
    std::vector<std::uint8_t> done(n, 0);
    parallel_for(n, resolve_workers(a.workers), [&](std::size_t i) {
        const auto& r = m.records[i];
        try {
            if (!r.tensor_refs.trajectory) throw Error("missing input: trajectory");
            auto in = trajstore::open_input(r.resolve(*r.tensor_refs.trajectory));
            trajstore::TrajectoryReader reader(in);
            auto result = delta::compute(reader, delta::Products::all());
            const std::string stem = safe_file_stem(r.id);
            trajstore::write_delta_grid_file(result.to_delta_grid(), out_dir / "grids" / (stem + ".dgrd"));
            auto sum_out = trajstore::open_output(out_dir / "summary" / (stem + ".lsum"));
            trajstore::write_layer_summary({*result.summary}, sum_out);
            sum_out.close();
            if (!sum_out) throw Error("cannot write layer summary");
            done[i] = 1;
        } catch (const Error& e) {
            failures[i] = e.what();
        } catch (const fs::filesystem_error& e) {
            failures[i] = e.what();
        }
    });
    std::size_t failed = 0;
    for (std::size_t i = 0; i < n; ++i) {
        auto& r = m.records[i];
        if (!done[i]) {
            ++failed;
            io.err << "record " << r.id << ": " << failures[i] << '\n';
            continue;
        }
        const std::string stem = safe_file_stem(r.id);
        r.tensor_refs.delta_grid = (out_dir / "grids" / (stem + ".dgrd")).string();
        r.tensor_refs.layer_summary = (out_dir / "summary" / (stem + ".lsum")).string();
    }
    trajstore::save_manifest(m, out_dir / "manifest.json");
    io.out << "wrote " << (n - failed) << " of " << n << " records to " << a.out << '\n';
    return failed == 0 ? kExitOk : kExitFailure;
}

struct ScoreArgs {
    std::string manifest;
    std::string metrics;
    std::string out;
    std::string segment;
    double truncate = 0.0;
    std::size_t workers = 0;
};

std::vector<metrics::MetricConfig> configs_from(const std::string& list, const std::string& segment, double truncate) {
    std::vector<metrics::MetricConfig> configs;
    if (list.empty()) {
        for (auto id : metrics::all_metrics()) configs.push_back({.id = id});
    } else {
        configs = metrics::parse_metric_list(list);
    }
    if (!segment.empty() && truncate > 0.0) throw Error("--segment and --truncate are mutually exclusive");
    for (auto& c : configs) {
        if (!std::holds_alternative<std::monostate>(c.selector)) continue;
        if (!segment.empty()) c.selector = metrics::SegmentSelector{segment};
        if (truncate > 0.0) c.selector = metrics::TruncationSelector{truncate};
    }
    return configs;
}

int cmd_score(const ScoreArgs& a, Streams io) {
    const auto configs = configs_from(a.metrics, a.segment, a.truncate);
    const Manifest m = trajstore::load_manifest(a.manifest);
    const auto table = metrics::score_dataset(m.records, configs, {.workers = resolve_workers(a.workers)});
    metrics::write_score_csv_file(table, a.out);

    std::size_t row_errors = 0;
    for (const auto& row : table.rows) row_errors += row.errors.size();
    std::vector<std::string> unsatisfied;
    for (std::size_t c = 0; c < table.metrics.size() && !table.rows.empty(); ++c) {
        bool any = false;
        for (const auto& row : table.rows) any = any || row.scores[c].has_value();
        if (!any) unsatisfied.push_back(table.metrics[c]);
    }
    for (const auto& row : table.rows) {
        for (const auto& e : row.errors) io.err << "record " << row.record_id << ": " << e << '\n';
    }
    io.out << "scored " << table.rows.size() << " records x " << table.metrics.size() << " metrics";
    if (row_errors > 0) io.out << " (" << row_errors << " cells failed)";
    io.out << '\n';
    if (!unsatisfied.empty()) {
        for (const auto& u : unsatisfied) io.err << "error: metric " << u << " could not be computed for any record\n";
        return kExitFailure;
    }
    return kExitOk;
}

struct GradeArgs {
    std::string manifest;
    std::string gold;
    std::string mode = "boxed";
    std::string out;
};

int cmd_grade(const GradeArgs& a, Streams io) {
    const auto mode = grader::parse_mode(a.mode);
    const Manifest m = trajstore::load_manifest(a.manifest);
    std::optional<grader::GoldMap> gold;
    if (!a.gold.empty()) gold = grader::read_gold_csv(a.gold);
    grader::GradeSummary summary;
    const Manifest graded = grader::grade_manifest(m, gold ? &*gold : nullptr, mode, &summary);
    trajstore::save_manifest(graded, a.out);
    for (const auto& d : summary.diagnostics) io.err << d << '\n';
    io.out << "graded " << summary.total << " records: " << summary.correct << " correct, "
           << (summary.labeled - summary.correct) << " incorrect, " << summary.unlabeled << " unlabeled\n";
    return kExitOk;
}

struct EvalArgs {
    std::vector<std::string> scores;
    std::string metrics;
    std::string out;
    std::size_t resamples = 4000;
    double level = 0.95;
    std::uint64_t seed = 0;
    std::size_t stratify = 0;
    std::size_t workers = 0;
};

struct RunResult {
    std::vector<evalstats::MetricReport> reports;
    std::vector<metrics::SelectionCounts> counts;
};

RunResult evaluate_table(const metrics::ScoreTable& table, const std::vector<std::string>& metric_names,
                         const evalstats::EvalOptions& options) {
    RunResult run;
    for (const auto& name : metric_names) {
        metrics::SelectionCounts counts;
        const auto data = metrics::labeled_scores(table, name, &counts);
        if (data.size() == 0) throw Error("metric " + name + ": no labeled scores");
        if (data.positives() == 0 || data.negatives() == 0) throw Error("degenerate labels");
        run.reports.push_back(evalstats::evaluate(name, data, options));
        run.counts.push_back(counts);
    }
    return run;
}

std::vector<std::string> run_header() {
    return {"metric", "n", "n_correct", "n_incorrect", "unlabeled", "missing", "auroc", "auroc_lo", "auroc_hi",
            "fpr95", "aupr", "hedges_g", "g_lo", "g_hi", "note"};
}

std::vector<std::string> run_fields(const evalstats::MetricReport& r, const metrics::SelectionCounts& c) {
    return {r.metric,
            std::to_string(c.used),
            std::to_string(r.n_correct),
            std::to_string(r.n_incorrect),
            std::to_string(c.unlabeled),
            std::to_string(c.missing_score),
            csv::format_double(r.auroc),
            r.auroc_ci ? csv::format_double(r.auroc_ci->lo) : "",
            r.auroc_ci ? csv::format_double(r.auroc_ci->hi) : "",
            csv::format_double(r.fpr95),
            csv::format_double(r.aupr),
            opt_number(r.hedges_g),
            r.g_ci ? csv::format_double(r.g_ci->lo) : "",
            r.g_ci ? csv::format_double(r.g_ci->hi) : "",
            r.note};
}

json report_json(const evalstats::MetricReport& r, const metrics::SelectionCounts& c) {
    json j;
    j["metric"] = r.metric;
    j["n"] = c.used;
    j["n_correct"] = r.n_correct;
    j["n_incorrect"] = r.n_incorrect;
    j["unlabeled"] = c.unlabeled;
    j["missing"] = c.missing_score;
    j["auroc"] = r.auroc;
    j["fpr95"] = r.fpr95;
    j["aupr"] = r.aupr;
    j["hedges_g"] = opt_json(r.hedges_g);
    auto interval = [](const std::optional<evalstats::Interval>& ci) -> json {
        if (!ci) return nullptr;
        return {{"lo", ci->lo}, {"hi", ci->hi}, {"level", ci->level}, {"resamples", ci->resamples}, {"seed", ci->seed}};
    };
    j["auroc_ci"] = interval(r.auroc_ci);
    j["hedges_g_ci"] = interval(r.g_ci);
    if (!r.length_bins.empty()) {
        json bins = json::array();
        for (const auto& b : r.length_bins) {
            bins.push_back({{"min_length", b.min_length},
                            {"max_length", b.max_length},
                            {"n", b.n},
                            {"n_correct", b.n_correct},
                            {"n_incorrect", b.n_incorrect},
                            {"auroc", opt_json(b.auroc)}});
        }
        j["length_bins"] = std::move(bins);
    }
    if (!r.note.empty()) j["note"] = r.note;
    return j;
}

std::pair<double, double> mean_sd(const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    if (v.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

int cmd_eval(const EvalArgs& a, Streams io) {
    if (a.resamples < 1) throw Error("--resamples must be ≥ 1");
    if (!(a.level > 0.0 && a.level < 1.0)) throw Error("--level must be in (0, 1)");
    std::vector<metrics::ScoreTable> tables;
    for (const auto& path : a.scores) tables.push_back(metrics::read_score_csv_file(path));

    std::vector<std::string> names;
    if (a.metrics.empty()) {
        names = tables.front().metrics;
    } else {
        std::stringstream ss(a.metrics);
        for (std::string item; std::getline(ss, item, ',');) {
            if (!item.empty()) names.push_back(item);
        }
    }
    for (std::size_t t = 0; t < tables.size(); ++t) {
        for (const auto& name : names) {
            if (!tables[t].metric_index(name)) throw Error(a.scores[t] + ": no metric column " + name);
        }
    }

    evalstats::EvalOptions options;
    options.bootstrap = {.resamples = a.resamples, .level = a.level, .seed = a.seed, .workers = resolve_workers(a.workers)};
    options.length_bins = a.stratify;

    std::vector<RunResult> runs;
    for (const auto& table : tables) runs.push_back(evaluate_table(table, names, options));

    const fs::path out_dir = a.out;
    json doc;
    doc["runs"] = json::array();
    std::ostringstream per_run;
    {
        auto header = run_header();
        if (runs.size() > 1) header.insert(header.begin(), "run");
        csv::write_row(per_run, header);
    }
    for (std::size_t r = 0; r < runs.size(); ++r) {
        json run_doc;
        run_doc["scores"] = a.scores[r];
        run_doc["metrics"] = json::array();
        for (std::size_t k = 0; k < names.size(); ++k) {
            auto fields = run_fields(runs[r].reports[k], runs[r].counts[k]);
            if (runs.size() > 1) fields.insert(fields.begin(), std::to_string(r));
            csv::write_row(per_run, fields);
            run_doc["metrics"].push_back(report_json(runs[r].reports[k], runs[r].counts[k]));
        }
        doc["runs"].push_back(std::move(run_doc));
    }

    if (runs.size() > 1) {
        std::ostringstream summary;
        csv::write_row(summary, {"metric", "runs", "auroc_mean", "auroc_sd", "fpr95_mean", "fpr95_sd", "aupr_mean",
                                 "aupr_sd", "hedges_g_mean", "hedges_g_sd"});
        doc["summary"] = json::array();
        for (std::size_t k = 0; k < names.size(); ++k) {
            std::vector<double> au, fp, ap, g;
            for (const auto& run : runs) {
                au.push_back(run.reports[k].auroc);
                fp.push_back(run.reports[k].fpr95);
                ap.push_back(run.reports[k].aupr);
                if (run.reports[k].hedges_g) g.push_back(*run.reports[k].hedges_g);
            }
            const auto [au_m, au_s] = mean_sd(au);
            const auto [fp_m, fp_s] = mean_sd(fp);
            const auto [ap_m, ap_s] = mean_sd(ap);
            std::vector<std::string> row{names[k], std::to_string(runs.size()), csv::format_double(au_m),
                                         csv::format_double(au_s), csv::format_double(fp_m), csv::format_double(fp_s),
                                         csv::format_double(ap_m), csv::format_double(ap_s)};
            json s = {{"metric", names[k]}, {"runs", runs.size()}, {"auroc_mean", au_m}, {"auroc_sd", au_s},
                      {"fpr95_mean", fp_m}, {"fpr95_sd", fp_s}, {"aupr_mean", ap_m}, {"aupr_sd", ap_s}};
            if (g.size() == runs.size()) {
                const auto [g_m, g_s] = mean_sd(g);
                row.push_back(csv::format_double(g_m));
                row.push_back(csv::format_double(g_s));
                s["hedges_g_mean"] = g_m;
                s["hedges_g_sd"] = g_s;
            } else {
                row.emplace_back();
                row.emplace_back();
                s["hedges_g_mean"] = nullptr;
                s["hedges_g_sd"] = nullptr;
            }
            csv::write_row(summary, row);
            doc["summary"].push_back(std::move(s));
        }
        write_text(out_dir / "eval.csv", summary.str());
        write_text(out_dir / "eval_runs.csv", per_run.str());
    } else {
        write_text(out_dir / "eval.csv", per_run.str());
    }

    if (a.stratify > 0) {
        std::ostringstream bins;
        std::vector<std::string> header{"metric", "bin", "min_length", "max_length", "n", "n_correct", "n_incorrect",
                                        "auroc"};
        if (runs.size() > 1) header.insert(header.begin(), "run");
        csv::write_row(bins, header);
        for (std::size_t r = 0; r < runs.size(); ++r) {
            for (const auto& report : runs[r].reports) {
                for (std::size_t b = 0; b < report.length_bins.size(); ++b) {
                    const auto& bin = report.length_bins[b];
                    std::vector<std::string> row{report.metric,
                                                 std::to_string(b),
                                                 std::to_string(bin.min_length),
                                                 std::to_string(bin.max_length),
                                                 std::to_string(bin.n),
                                                 std::to_string(bin.n_correct),
                                                 std::to_string(bin.n_incorrect),
                                                 opt_number(bin.auroc)};
                    if (runs.size() > 1) row.insert(row.begin(), std::to_string(r));
                    csv::write_row(bins, row);
                }
                if (report.length_bins.empty()) {
                    io.err << "warning: " << report.metric << ": no lengths, stratification skipped\n";
                }
            }
        }
        write_text(out_dir / "eval_length_bins.csv", bins.str());
    }

    doc["options"] = {{"resamples", a.resamples}, {"level", a.level}, {"seed", a.seed}, {"stratify_length", a.stratify}};
    write_text(out_dir / "eval.json", doc.dump(1) + "\n");

    for (std::size_t k = 0; k < names.size(); ++k) {
        const auto& r = runs.front().reports[k];
        io.out << r.metric << ": auroc " << csv::format_double(r.auroc) << ", fpr95 " << csv::format_double(r.fpr95)
               << ", aupr " << csv::format_double(r.aupr) << '\n';
    }
    return kExitOk;
}

struct SweepArgs {
    std::string manifest;
    std::string taus = "0,0.01,0.1,0.5,1,2,5,10,100,inf";
    std::string out;
    std::string segment;
    double truncate = 0.0;
    std::size_t workers = 0;
};

int cmd_sweep_tau(const SweepArgs& a, Streams io) {
    std::vector<metrics::MetricConfig> configs;
    std::stringstream ss(a.taus);
    for (std::string item; std::getline(ss, item, ',');) {
        if (item.empty()) continue;
        configs.push_back({.id = metrics::MetricId::stalt, .tau = metrics::Temperature::parse(item)});
    }
    if (configs.empty()) throw Error("empty tau list");
    if (!a.segment.empty()) {
        for (auto& c : configs) c.selector = metrics::SegmentSelector{a.segment};
    } else if (a.truncate > 0.0) {
        for (auto& c : configs) c.selector = metrics::TruncationSelector{a.truncate};
    }
    const Manifest m = trajstore::load_manifest(a.manifest);
    const auto table = metrics::score_dataset(m.records, configs, {.workers = resolve_workers(a.workers)});

    std::ostringstream out;
    csv::write_row(out, {"tau", "n", "auroc", "fpr95", "aupr"});
    for (std::size_t k = 0; k < configs.size(); ++k) {
        metrics::SelectionCounts counts;
        const auto data = metrics::labeled_scores(table, table.metrics[k], &counts);
        if (data.size() == 0 || data.positives() == 0 || data.negatives() == 0) throw Error("degenerate labels");
        const double au = evalstats::auroc(data);
        csv::write_row(out, {configs[k].tau.to_string(), std::to_string(counts.used), csv::format_double(au),
                             csv::format_double(evalstats::fpr_at_tpr(data, 0.95)),
                             csv::format_double(evalstats::aupr(data))});
        io.out << "tau=" << configs[k].tau.to_string() << ": auroc " << csv::format_double(au) << '\n';
    }
    write_text(a.out, out.str());
    return kExitOk;
}

struct HeatmapArgs {
    std::string manifest;
    std::string quantity = "dtime";
    std::size_t bins = 100;
    std::string out;
    std::string json_out;
    std::size_t workers = 0;
};

int cmd_heatmap(const HeatmapArgs& a, Streams io) {
    const auto quantity = analysis::parse_quantity(a.quantity);
    const Manifest m = trajstore::load_manifest(a.manifest);
    const auto heatmap = analysis::difference_heatmap(m.records, quantity, a.bins, resolve_workers(a.workers));
    write_text(a.out, analysis::heatmap_csv(heatmap));
    if (!a.json_out.empty()) write_text(a.json_out, analysis::heatmap_json(heatmap));
    io.out << "heatmap " << a.quantity << ": " << heatmap.values.rows << " bins x " << heatmap.values.cols
           << " layers, " << heatmap.n_correct << " correct vs " << heatmap.n_incorrect << " incorrect\n";
    return kExitOk;
}

struct GapArgs {
    std::string scores;
    std::string metric = "stalt";
    std::string group_col = "group";
    std::string out;
    std::size_t resamples = 4000;
    double level = 0.95;
    std::uint64_t seed = 0;
    std::size_t workers = 0;
};

int cmd_gap(const GapArgs& a, Streams io) {
    const auto table = metrics::read_score_csv_file(a.scores);
    const auto col = table.metric_index(a.metric);
    if (!col) throw Error("no metric column " + a.metric);

    std::vector<std::string> groups(table.rows.size());
    if (a.group_col == "group") {
        for (std::size_t i = 0; i < table.rows.size(); ++i) groups[i] = table.rows[i].group.value_or("");
    } else {
        const auto raw = csv::read_file(a.scores);
        const auto gc = raw.column(a.group_col);
        for (std::size_t i = 0; i < raw.rows.size(); ++i) groups[i] = raw.rows[i][gc];
    }

    evalstats::LabeledScores data;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& row = table.rows[i];
        if (!row.label || !row.scores[*col]) continue;
        if (groups[i].empty()) throw Error("record " + row.record_id + " has no " + a.group_col);
        data.scores.push_back(*row.scores[*col]);
        data.labels.push_back(*row.label);
        data.groups.push_back(groups[i]);
    }
    if (data.size() == 0) throw Error("no labeled scores");
    const evalstats::BootstrapOptions options{.resamples = a.resamples, .level = a.level, .seed = a.seed,
                                              .workers = resolve_workers(a.workers)};
    const auto report = evalstats::group_gap_report(data, options);

    std::ostringstream out;
    csv::write_row(out, {"group", "n", "n_correct", "n_incorrect", "g", "g_lo", "g_hi", "reason"});
    for (const auto& g : report) {
        csv::write_row(out, {g.group, std::to_string(g.n), std::to_string(g.n_correct), std::to_string(g.n_incorrect),
                             opt_number(g.g), g.ci ? csv::format_double(g.ci->lo) : "",
                             g.ci ? csv::format_double(g.ci->hi) : "", g.reason});
        io.out << a.group_col << "=" << g.group << ": g " << (g.g ? csv::format_double(*g.g) : "undefined (" + g.reason + ")")
               << '\n';
    }
    write_text(a.out, out.str());
    return kExitOk;
}

struct SynthArgs {
    std::string preset = "hotspot";
    std::string out;
    std::optional<std::size_t> n;
    std::optional<std::uint64_t> seed;
    std::optional<std::uint64_t> t_min;
    std::optional<std::uint64_t> t_max;
    std::optional<std::uint64_t> layers;
    std::optional<std::uint64_t> width;
    std::optional<double> multiplier;
    std::optional<double> noise;
    std::optional<double> correct_fraction;
    std::string hotspots;
    std::string dtype;
};

int cmd_synth(const SynthArgs& a, Streams io) {
    auto spec = analysis::synth_preset(a.preset);
    if (a.n) spec.n = *a.n;
    if (a.seed) spec.seed = *a.seed;
    if (a.t_min) spec.t_min = *a.t_min;
    if (a.t_max) spec.t_max = *a.t_max;
    if (a.layers) spec.layers = *a.layers;
    if (a.width) spec.width = *a.width;
    if (a.multiplier) spec.multiplier = *a.multiplier;
    if (a.noise) spec.noise = *a.noise;
    if (a.correct_fraction) spec.correct_fraction = *a.correct_fraction;
    if (!a.dtype.empty()) spec.dtype = trajstore::parse_dtype(a.dtype);
    if (!a.hotspots.empty()) {
        spec.hotspot_layers.clear();
        std::stringstream ss(a.hotspots);
        for (std::string item; std::getline(ss, item, ',');) {
            if (!item.empty()) spec.hotspot_layers.push_back(static_cast<std::uint64_t>(csv::parse_double(item)));
        }
    }
    const auto result = analysis::synth_cohort(spec, a.out);
    io.out << "wrote " << result.manifest.records.size() << " records to " << result.manifest_path.string() << '\n';
    return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Hidden-state trajectory analytics: deltas, StALT and baseline scores, evaluation"};
    app.name("stalt");
    app.require_subcommand(1);
    Streams io{out, err};
    std::function<int()> action;

    ValidateArgs va;
    auto* validate = app.add_subcommand("validate", "Check a manifest and its tensor files");
    validate->add_option("--manifest", va.manifest, "Manifest JSON")->required();
    validate->add_flag("--deep", va.deep, "Scan every step and recompute layer summaries");
    validate->callback([&] { action = [&] { return cmd_validate(va, io); }; });

    DeltasArgs da;
    auto* deltas = app.add_subcommand("deltas", "Write delta grids and layer summaries for every record");
    deltas->add_option("--manifest", da.manifest, "Input manifest")->required();
    deltas->add_option("--out", da.out, "Output directory")->required();
    deltas->add_option("--workers", da.workers, "Worker threads (0 = all cores)");
    deltas->callback([&] { action = [&] { return cmd_deltas(da, io); }; });

    ScoreArgs sa;
    auto* score = app.add_subcommand("score", "Score every record with a list of metrics");
    score->add_option("--manifest", sa.manifest, "Input manifest")->required();
    score->add_option("--metrics", sa.metrics, "Comma-separated metric specs, e.g. stalt:tau=1,gen_tokens");
    score->add_option("--out", sa.out, "Output CSV")->required();
    score->add_option("--segment", sa.segment, "Restrict metrics without a selector to this segment");
    score->add_option("--truncate", sa.truncate, "Restrict metrics without a selector to the leading fraction")
        ->check(CLI::Range(0.0, 1.0));
    score->add_option("--workers", sa.workers, "Worker threads (0 = all cores)");
    score->callback([&] { action = [&] { return cmd_score(sa, io); }; });

    GradeArgs ga;
    auto* grade = app.add_subcommand("grade", "Label records by comparing extracted answers to gold");
    grade->add_option("--manifest", ga.manifest, "Input manifest")->required();
    grade->add_option("--gold", ga.gold, "Gold CSV (id,answer); defaults to each record's gold field");
    grade->add_option("--mode", ga.mode, "boxed | choice | integer")->check(CLI::IsMember({"boxed", "choice", "integer"}));
    grade->add_option("--out", ga.out, "Output manifest")->required();
    grade->callback([&] { action = [&] { return cmd_grade(ga, io); }; });

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "AUROC, FPR95, AUPR and Hedges' g with bootstrap intervals");
    eval->add_option("--scores", ea.scores, "One or more score CSVs (one per run)")->required()->expected(1, -1);
    eval->add_option("--metrics", ea.metrics, "Comma-separated metric columns (default: all)");
    eval->add_option("--out", ea.out, "Output directory")->required();
    eval->add_option("--resamples", ea.resamples, "Bootstrap resamples")->check(CLI::PositiveNumber);
    eval->add_option("--level", ea.level, "Interval level")->check(CLI::Range(0.0, 1.0));
    eval->add_option("--seed", ea.seed, "Bootstrap seed");
    eval->add_option("--stratify-length", ea.stratify, "Number of length bins (0 = off)");
    eval->add_option("--workers", ea.workers, "Worker threads (0 = all cores)");
    eval->callback([&] { action = [&] { return cmd_eval(ea, io); }; });

    SweepArgs wa;
    auto* sweep = app.add_subcommand("sweep-tau", "AUROC of StALT across softmax temperatures");
    sweep->add_option("--manifest", wa.manifest, "Input manifest")->required();
    sweep->add_option("--taus", wa.taus, "Comma-separated temperatures; 0 and inf are the limits");
    sweep->add_option("--out", wa.out, "Output CSV")->required();
    sweep->add_option("--segment", wa.segment, "Restrict to a segment");
    sweep->add_option("--truncate", wa.truncate, "Restrict to the leading fraction")->check(CLI::Range(0.0, 1.0));
    sweep->add_option("--workers", wa.workers, "Worker threads (0 = all cores)");
    sweep->callback([&] { action = [&] { return cmd_sweep_tau(wa, io); }; });

    HeatmapArgs ha;
    auto* heatmap = app.add_subcommand("heatmap", "Correct-minus-incorrect heatmap over relative position and layer");
    heatmap->add_option("--manifest", ha.manifest, "Manifest with delta grids")->required();
    heatmap->add_option("--quantity", ha.quantity, "dtime | dlayer")->check(CLI::IsMember({"dtime", "dlayer"}));
    heatmap->add_option("--bins", ha.bins, "Relative-position bins")->check(CLI::Range(2, 1000000));
    heatmap->add_option("--out", ha.out, "Output CSV (bin,layer,value)")->required();
    heatmap->add_option("--json", ha.json_out, "Also write JSON here");
    heatmap->add_option("--workers", ha.workers, "Worker threads (0 = all cores)");
    heatmap->callback([&] { action = [&] { return cmd_heatmap(ha, io); }; });

    GapArgs pa;
    auto* gap = app.add_subcommand("gap", "Per-group Hedges' g with bootstrap intervals");
    gap->add_option("--scores", pa.scores, "Score CSV")->required();
    gap->add_option("--metric", pa.metric, "Metric column");
    gap->add_option("--group-col", pa.group_col, "Column holding group tags");
    gap->add_option("--out", pa.out, "Output CSV")->required();
    gap->add_option("--resamples", pa.resamples, "Bootstrap resamples")->check(CLI::PositiveNumber);
    gap->add_option("--level", pa.level, "Interval level")->check(CLI::Range(0.0, 1.0));
    gap->add_option("--seed", pa.seed, "Bootstrap seed");
    gap->add_option("--workers", pa.workers, "Worker threads (0 = all cores)");
    gap->callback([&] { action = [&] { return cmd_gap(pa, io); }; });

    SynthArgs ya;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic labeled cohort");
    synth->add_option("--preset", ya.preset, "hotspot | two-group")->check(CLI::IsMember({"hotspot", "two-group"}));
    synth->add_option("--out", ya.out, "Output directory")->required();
    synth->add_option("--n", ya.n, "Number of records");
    synth->add_option("--seed", ya.seed, "Generator seed");
    synth->add_option("--t-min", ya.t_min, "Shortest trace");
    synth->add_option("--t-max", ya.t_max, "Longest trace");
    synth->add_option("--layers", ya.layers, "Transformer layers L");
    synth->add_option("--width", ya.width, "Hidden width D");
    synth->add_option("--multiplier", ya.multiplier, "Hotspot noise multiplier for correct records");
    synth->add_option("--noise", ya.noise, "Base noise amplitude");
    synth->add_option("--correct-fraction", ya.correct_fraction, "Fraction of correct records");
    synth->add_option("--hotspots", ya.hotspots, "Comma-separated hotspot layers");
    synth->add_option("--dtype", ya.dtype, "f32 | f16 | bf16")->check(CLI::IsMember({"f32", "f16", "bf16"}));
    synth->callback([&] { action = [&] { return cmd_synth(ya, io); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }
    try {
        return action();
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
    } catch (const CLI::Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    return kExitFailure;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    std::vector<const char*> argv{"stalt"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace stalt::cli
