// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.
#include "support/fixtures.hpp"

#include "cli.hpp"
#include "stalt/analysis.hpp"
#include "stalt/csv.hpp"
#include "stalt/delta.hpp"
#include "stalt/error.hpp"
#include "stalt/evalstats.hpp"
#include "stalt/metrics.hpp"
#include "stalt/score_csv.hpp"
#include "stalt/trajstore.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>

using namespace stalt;
using trajstore::Dtype;

namespace {

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail = {}) {
    std::printf("%s  %s%s%s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.empty() ? "" : "  -- ", detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

// Runs a criterion body; an escaping exception counts as a failure.
void criterion(const std::string& name, const std::function<std::pair<bool, std::string>()>& body) {
    try {
        const auto [ok, detail] = body();
        report(ok, name, detail);
    } catch (const std::exception& e) {
        report(false, name, std::string("exception: ") + e.what());
    }
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

oracle::Matrix to_matrix(const Grid& g) {
    oracle::Matrix m(g.rows, std::vector<double>(g.cols));
    for (std::size_t r = 0; r < g.rows; ++r) {
        for (std::size_t c = 0; c < g.cols; ++c) m[r][c] = g(r, c);
    }
    return m;
}

double max_rel_err(const Grid& got, const oracle::Matrix& want) {
    if (got.rows != want.size()) return INFINITY;
    double worst = 0.0;
    for (std::size_t r = 0; r < got.rows; ++r) {
        if (got.cols != want[r].size()) return INFINITY;
        for (std::size_t c = 0; c < got.cols; ++c) worst = std::max(worst, oracle::rel_err(got(r, c), want[r][c]));
    }
    return worst;
}

struct RandomCase {
    trajstore::HiddenTrajectory h;
    delta::DeltaResult result;
};

// 100 random trajectories, streamed through the reader from their STRJ bytes.
std::vector<RandomCase> random_cases() {
    std::mt19937_64 rng(20240601);
    std::uniform_int_distribution<int> t(2, 8), lp(2, 5), d(1, 16);
    const Dtype dtypes[] = {Dtype::f32, Dtype::f16, Dtype::bf16};
    std::vector<RandomCase> out;
    for (int k = 0; k < 100; ++k) {
        RandomCase c;
        c.h = fixtures::random_trajectory(rng, t(rng), lp(rng), d(rng), dtypes[k % 3]);
        std::istringstream in(fixtures::to_bytes(c.h));
        trajstore::TrajectoryReader reader(in);
        c.result = delta::compute(reader, delta::Products::all());
        out.push_back(std::move(c));
    }
    return out;
}

evalstats::LabeledScores random_labeled(std::mt19937_64& rng, std::size_t n) {
    std::uniform_int_distribution<int> lattice(0, 12);
    std::bernoulli_distribution coin(0.45);
    evalstats::LabeledScores d;
    for (std::size_t i = 0; i < n; ++i) {
        const bool y = coin(rng);
        d.labels.push_back(y);
        d.scores.push_back(0.25 * lattice(rng) + (y ? 0.75 : 0.0));
    }
    d.labels[0] = true;
    d.labels[1] = false;
    return d;
}

std::vector<int> ints(const evalstats::LabeledScores& d) { return {d.labels.begin(), d.labels.end()}; }

int cli_run(const std::vector<std::string>& args, std::string* err = nullptr) {
    std::ostringstream out, e;
    const int code = cli::run(args, out, e);
    if (err) *err = e.str();
    return code;
}

// AUROC values of the seed-7 end-to-end run, frozen after the first computation.
// The synthetic draws use libstdc++'s normal_distribution, so these hold for that library.
const std::map<std::string, double> kFrozenAuroc = {
    {"stalt", 0.93879999999999997},
    {"stalt_reversed", 0.54449999999999998},
    {"mean_time_l2", 0.66639999999999999},
    {"mean_layer_l2", 0.62670000000000003},
    {"gen_tokens", 0.47994999999999999},
    {"max_prob", 0.64359999999999995},
    {"perplexity", 0.59089999999999998},
    {"entropy", 0.64359999999999995},
    {"coe_r", 0.49990000000000001},
    {"coe_c", 0.53810000000000002},
};

}  // namespace

int main() {
    // ---------------------------------------------------------------- deltas
    const auto t0 = std::chrono::steady_clock::now();
    const auto cases = random_cases();
    criterion("delta oracle equivalence (100 random trajectories, all dtypes)", [&] {
        double worst_f32 = 0.0, worst_half = 0.0;
        for (const auto& c : cases) {
            const auto x = fixtures::to_tensor(c.h);
            int degenerate = 0;
            double e = 0.0;
            e = std::max(e, max_rel_err(*c.result.dt, oracle::delta_time(x)));
            e = std::max(e, max_rel_err(*c.result.dl, oracle::delta_layer(x)));
            e = std::max(e, max_rel_err(*c.result.ct, oracle::cos_time(x, &degenerate)));
            e = std::max(e, max_rel_err(*c.result.cl, oracle::cos_layer(x, &degenerate)));
            e = std::max(e, max_rel_err(*c.result.summary, oracle::layer_mean(x)));
            if (c.result.degenerate_cosines != static_cast<std::uint64_t>(degenerate)) e = INFINITY;
            (c.h.shape.dtype == Dtype::f32 ? worst_f32 : worst_half) = std::max(
                c.h.shape.dtype == Dtype::f32 ? worst_f32 : worst_half, e);
        }
        const double elapsed = seconds_since(t0);
        const bool ok = worst_f32 <= 1e-12 && worst_half <= 1e-6 && elapsed < 5.0;
        return std::pair{ok, "max rel err f32 " + fmt("%.3g", worst_f32) + ", f16/bf16 " + fmt("%.3g", worst_half) +
                                 ", " + fmt("%.3f", elapsed) + " s"};
    });

    // ---------------------------------------------------------------- StALT
    criterion("StALT uniform endpoint: |StALT(tau=1e9) - mean aligned dtime| <= 1e-9", [&] {
        double worst = 0.0;
        for (const auto& c : cases) {
            const auto aligned = delta::align(*c.result.dt, *c.result.dl);
            double mean = 0.0;
            for (double v : aligned.at.values) mean += v;
            mean /= static_cast<double>(aligned.at.size());
            worst = std::max(worst, std::abs(metrics::stalt(aligned, metrics::Temperature::of(1e9)) - mean));
        }
        return std::pair{worst <= 1e-9, "max abs diff " + fmt("%.3g", worst)};
    });
    criterion("StALT hard endpoint: StALT(tau=1e-9) equals argmax-selected amplitude exactly", [&] {
        int mismatches = 0;
        for (const auto& c : cases) {
            const auto aligned = delta::align(*c.result.dt, *c.result.dl);
            const double hard = oracle::hard_stalt(to_matrix(aligned.at), to_matrix(aligned.al));
            if (metrics::stalt(aligned, metrics::Temperature::of(1e-9)) != hard) ++mismatches;
            if (metrics::stalt(aligned, metrics::Temperature::zero()) != hard) ++mismatches;
        }
        return std::pair{mismatches == 0, std::to_string(mismatches) + " mismatches over 100 trajectories"};
    });
    criterion("worked StALT value 6.76159 +- 1e-5, reversed on swapped fixture equal", [] {
        delta::AlignedGrids g{Grid(1, 2), Grid(1, 2)};
        g.at.values = {5, 7};
        g.al.values = {1, 3};
        delta::AlignedGrids swapped{g.al, g.at};
        const double want = oracle::stalt({{5, 7}}, {{1, 3}}, 1.0);
        const double s = metrics::stalt(g, metrics::Temperature::of(1));
        const double r = metrics::stalt_reversed(swapped, metrics::Temperature::of(1));
        const bool ok = std::abs(s - 6.76159) <= 1e-5 && std::abs(s - want) <= 1e-12 && std::abs(r - s) <= 1e-12;
        return std::pair{ok, "stalt " + fmt("%.12f", s) + ", reversed " + fmt("%.12f", r) + ", oracle " +
                                 fmt("%.12f", want)};
    });

    // ---------------------------------------------------------------- classification
    criterion("AUROC equals pairwise brute force <= 1e-12 (50 sets, n <= 200, ties)", [] {
        std::mt19937_64 rng(71);
        std::uniform_int_distribution<std::size_t> size(2, 200);
        double worst = 0.0;
        for (int k = 0; k < 50; ++k) {
            const auto d = random_labeled(rng, size(rng));
            worst = std::max(worst, std::abs(evalstats::auroc(d) - oracle::auroc_pairs(d.scores, ints(d))));
        }
        return std::pair{worst <= 1e-12, "max abs diff " + fmt("%.3g", worst)};
    });
    criterion("FPR95 and AUPR match exhaustive threshold enumeration (50 sets, n <= 50)", [] {
        std::mt19937_64 rng(72);
        std::uniform_int_distribution<std::size_t> size(2, 50);
        double worst_fpr = 0.0, worst_ap = 0.0;
        for (int k = 0; k < 50; ++k) {
            const auto d = random_labeled(rng, size(rng));
            worst_fpr = std::max(worst_fpr, std::abs(evalstats::fpr_at_tpr(d) - oracle::fpr_at_tpr(d.scores, ints(d), 0.95)));
            worst_ap = std::max(worst_ap, std::abs(evalstats::aupr(d) - oracle::average_precision(d.scores, ints(d))));
        }
        return std::pair{worst_fpr <= 1e-12 && worst_ap <= 1e-12,
                         "max diff fpr95 " + fmt("%.3g", worst_fpr) + ", aupr " + fmt("%.3g", worst_ap)};
    });
    criterion("monotone transforms (2x+3, exp) leave AUROC/FPR95/AUPR exactly unchanged", [] {
        std::mt19937_64 rng(73);
        int changed = 0;
        for (int k = 0; k < 50; ++k) {
            const auto d = random_labeled(rng, 80);
            for (auto f : {+[](double x) { return 2 * x + 3; }, +[](double x) { return std::exp(x); }}) {
                auto t = d;
                for (auto& x : t.scores) x = f(x);
                if (evalstats::auroc(t) != evalstats::auroc(d)) ++changed;
                if (evalstats::fpr_at_tpr(t) != evalstats::fpr_at_tpr(d)) ++changed;
                if (evalstats::aupr(t) != evalstats::aupr(d)) ++changed;
            }
        }
        return std::pair{changed == 0, std::to_string(changed) + " changed values"};
    });

    // ---------------------------------------------------------------- effect size
    criterion("Hedges' g closed form 0.80812 +- 1e-5, antisymmetric under swap", [] {
        const std::vector<double> a{2, 4}, b{0, 2};
        const double g = evalstats::hedges_g(a, b);
        const double want = oracle::hedges_g(a, b);
        const bool ok = std::abs(g - 0.80812) <= 1e-5 && std::abs(g - want) <= 1e-12 && evalstats::hedges_g(b, a) == -g;
        return std::pair{ok, "g " + fmt("%.12f", g) + ", oracle " + fmt("%.12f", want)};
    });

    // ---------------------------------------------------------------- bootstrap
    fixtures::TempDir cohort_dir("acceptance-cohort");
    const auto cohort = [&] {
        const auto synth = analysis::synth_cohort(analysis::synth_preset("hotspot"), cohort_dir.path());
        const auto configs = metrics::parse_metric_list("stalt");
        return metrics::labeled_scores(metrics::score_dataset(synth.manifest.records, configs), "stalt");
    }();
    criterion("bootstrap: fixed seed gives bit-identical (lo, hi) serial vs parallel", [&] {
        const evalstats::Statistic au = [](const evalstats::LabeledScores& s) { return evalstats::auroc(s); };
        const evalstats::Statistic g = [](const evalstats::LabeledScores& s) { return evalstats::hedges_g(s); };
        bool ok = true;
        for (const auto& stat : {au, g}) {
            const auto serial = evalstats::bootstrap_ci(stat, cohort, {.resamples = 4000, .seed = 11, .workers = 1});
            const auto again = evalstats::bootstrap_ci(stat, cohort, {.resamples = 4000, .seed = 11, .workers = 1});
            const auto parallel = evalstats::bootstrap_ci(stat, cohort, {.resamples = 4000, .seed = 11, .workers = 4});
            ok = ok && serial.lo == parallel.lo && serial.hi == parallel.hi && serial.lo == again.lo &&
                 serial.hi == again.hi;
        }
        return std::pair{ok, std::string("auroc and hedges_g intervals, workers 1 vs 4")};
    });
    criterion("bootstrap: 4000 resamples at level 0.95 on the synthetic cohort < 10 s", [&] {
        const auto start = std::chrono::steady_clock::now();
        const auto ci = evalstats::bootstrap_ci([](const evalstats::LabeledScores& s) { return evalstats::auroc(s); },
                                                cohort, {.resamples = 4000, .level = 0.95, .seed = 0, .workers = 1});
        const double elapsed = seconds_since(start);
        return std::pair{elapsed < 10.0 && ci.lo <= ci.hi,
                         fmt("%.3f s", elapsed) + ", auroc CI [" + fmt("%.4f", ci.lo) + ", " + fmt("%.4f", ci.hi) + "]"};
    });

    // ---------------------------------------------------------------- end to end
    fixtures::TempDir e2e("acceptance-e2e");
    std::map<std::string, double> auroc;
    double e2e_seconds = 0.0;
    std::string e2e_error;
    {
        const auto start = std::chrono::steady_clock::now();
        const std::string data = (e2e / "data").string(), deltas = (e2e / "deltas").string();
        const std::string scores = (e2e / "scores.csv").string(), eval = (e2e / "eval").string();
        std::string err;
        if (cli_run({"synth", "--preset", "hotspot", "--n", "200", "--seed", "7", "--out", data}, &err) != 0 ||
            cli_run({"deltas", "--manifest", data + "/manifest.json", "--out", deltas, "--workers", "1"}, &err) != 0 ||
            cli_run({"score", "--manifest", deltas + "/manifest.json", "--metrics",
                     "stalt:tau=1,stalt_reversed,mean_time_l2,mean_layer_l2,gen_tokens,max_prob,perplexity,entropy,coe_r,coe_c",
                     "--out", scores, "--workers", "1"},
                    &err) != 0 ||
            cli_run({"eval", "--scores", scores, "--out", eval, "--workers", "1"}, &err) != 0) {
            e2e_error = err;
        } else {
            const auto table = csv::read_file(eval + "/eval.csv");
            for (const auto& row : table.rows) {
                auroc[row[table.column("metric")]] = csv::parse_double(row[table.column("auroc")]);
            }
        }
        e2e_seconds = seconds_since(start);
    }
    std::printf("      end-to-end AUROC:");
    for (const auto& [k, v] : auroc) std::printf(" %s=%.17g", k.c_str(), v);
    std::printf("\n");
    auto have = [&](const char* k) { return auroc.count(k) > 0; };
    criterion("end-to-end pipeline runs single-threaded in < 60 s", [&] {
        return std::pair{e2e_error.empty() && auroc.size() == 10 && e2e_seconds < 60.0,
                         fmt("%.2f s", e2e_seconds) + (e2e_error.empty() ? "" : ", " + e2e_error)};
    });
    criterion("end-to-end: StALT AUROC >= 0.90", [&] {
        return std::pair{have("stalt") && auroc["stalt"] >= 0.90, "stalt " + fmt("%.4f", auroc["stalt"])};
    });
    criterion("end-to-end: StALT AUROC - reversed StALT AUROC >= 0.05", [&] {
        const double gap = auroc["stalt"] - auroc["stalt_reversed"];
        return std::pair{have("stalt") && have("stalt_reversed") && gap >= 0.05, "gap " + fmt("%.4f", gap)};
    });
    criterion("end-to-end: StALT AUROC >= mean_time_l2 AUROC", [&] {
        return std::pair{have("stalt") && have("mean_time_l2") && auroc["stalt"] >= auroc["mean_time_l2"],
                         "stalt " + fmt("%.4f", auroc["stalt"]) + ", mean_time_l2 " + fmt("%.4f", auroc["mean_time_l2"])};
    });
    criterion("end-to-end: AUROC values match the frozen regression numbers (1e-9)", [&] {
        std::string detail;
        bool ok = auroc.size() == kFrozenAuroc.size();
        for (const auto& [k, want] : kFrozenAuroc) {
            const auto it = auroc.find(k);
            if (it == auroc.end() || std::abs(it->second - want) > 1e-9) {
                ok = false;
                detail += k + (it == auroc.end() ? " missing; " : " " + fmt("%.17g", it->second) + "; ");
            }
        }
        return std::pair{ok, detail.empty() ? std::to_string(kFrozenAuroc.size()) + " metrics" : detail};
    });

    // ---------------------------------------------------------------- heatmaps
    criterion("heatmap: constant-grid and identity resampling are exact", [] {
        bool ok = true;
        for (double v : analysis::resample_grid(Grid(13, 5, 0.7), 100).values) ok = ok && v == 0.7;
        std::mt19937_64 rng(81);
        std::normal_distribution<double> n(0, 1);
        for (std::size_t rows : {2, 17, 100}) {
            Grid g(rows, 6);
            for (auto& v : g.values) v = n(rng);
            ok = ok && analysis::resample_grid(g, rows) == g;
        }
        return std::pair{ok, std::string()};
    });
    criterion("heatmap: difference antisymmetric under label flip", [&] {
        const auto m = trajstore::load_manifest(e2e / "deltas/manifest.json");
        auto flipped = m.records;
        for (auto& r : flipped) r.label = !*r.label;
        bool ok = true;
        for (auto q : {analysis::Quantity::dtime, analysis::Quantity::dlayer}) {
            const auto h = analysis::difference_heatmap(m.records, q, 100);
            const auto f = analysis::difference_heatmap(flipped, q, 100);
            for (std::size_t i = 0; i < h.values.size(); ++i) ok = ok && f.values.values[i] == -h.values.values[i];
        }
        return std::pair{ok, std::string("dtime and dlayer, 200 records")};
    });
    criterion("heatmap: synthetic hotspot layers carry the largest positive difference cells", [&] {
        const auto m = trajstore::load_manifest(e2e / "deltas/manifest.json");
        const auto h = analysis::difference_heatmap(m.records, analysis::Quantity::dtime, 100);
        const auto& v = h.values;
        const auto cell = static_cast<std::size_t>(std::max_element(v.values.begin(), v.values.end()) - v.values.begin());
        const std::size_t top_layer = h.first_layer + cell % v.cols;
        // Every per-bin maximum should also fall on a hotspot layer.
        std::size_t hot_bins = 0;
        for (std::size_t b = 0; b < v.rows; ++b) {
            const auto row = v.row(b);
            const auto l = h.first_layer + static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
            if (l == 4 || l == 5) ++hot_bins;
        }
        const bool ok = (top_layer == 4 || top_layer == 5) && hot_bins == v.rows;
        return std::pair{ok, "largest cell at layer " + std::to_string(top_layer) + ", per-bin maxima on hotspots in " +
                                 std::to_string(hot_bins) + "/" + std::to_string(v.rows) + " bins"};
    });

    // ---------------------------------------------------------------- formats
    criterion("format round trips: STRJ/DGRD/TOKS bit-exact over randomized fixtures", [] {
        std::mt19937_64 rng(91);
        std::uniform_int_distribution<int> t(1, 12), lp(2, 6), d(1, 20);
        std::uniform_real_distribution<double> u(0.0, 5.0);
        int bad = 0;
        const Dtype dtypes[] = {Dtype::f32, Dtype::f16, Dtype::bf16};
        for (int k = 0; k < 60; ++k) {
            const auto h = fixtures::random_trajectory(rng, t(rng), lp(rng), d(rng), dtypes[k % 3], 3.0);
            const auto bytes = fixtures::to_bytes(h);
            std::istringstream in(bytes);
            const auto back = trajstore::read_trajectory(in);
            if (back.values != h.values || back.shape != h.shape || fixtures::to_bytes(back) != bytes) ++bad;

            trajstore::DeltaGrid g;
            g.tokens = h.shape.tokens + 1;
            g.layers = h.shape.layers;
            g.dt = Grid(g.tokens - 1, g.layers);
            g.dl = Grid(g.tokens, g.layers - 1);
            for (auto& x : g.dt.values) x = static_cast<float>(u(rng));
            for (auto& x : g.dl.values) x = static_cast<float>(u(rng));
            if (k % 2) {
                g.ct = Grid(g.tokens - 1, g.layers);
                for (auto& x : g.ct->values) x = static_cast<float>(u(rng) / 5 - 0.5);
            }
            std::ostringstream gout;
            trajstore::write_delta_grid(g, gout);
            std::istringstream gin(gout.str());
            const auto gb = trajstore::read_delta_grid(gin);
            std::ostringstream gout2;
            trajstore::write_delta_grid(gb, gout2);
            if (gb.dt != g.dt || gb.dl != g.dl || gb.ct != g.ct || gb.cl.has_value() || gout2.str() != gout.str()) ++bad;

            trajstore::TokenStats s;
            for (std::uint64_t i = 0; i < h.shape.tokens; ++i) {
                s.chosen_logprob.push_back(static_cast<float>(-u(rng)));
                s.max_prob.push_back(static_cast<float>(u(rng) / 5 + 1e-3));
                s.entropy.push_back(static_cast<float>(u(rng)));
            }
            std::ostringstream sout;
            trajstore::write_token_stats(s, sout);
            std::istringstream sin(sout.str());
            const auto sb = trajstore::read_token_stats(sin);
            if (sb.chosen_logprob != s.chosen_logprob || sb.max_prob != s.max_prob || sb.entropy != s.entropy) ++bad;
        }
        return std::pair{bad == 0, std::to_string(bad) + " mismatches over 60 x 3 files"};
    });
    criterion("format errors: bad magic and truncation produce the specified messages", [] {
        std::mt19937_64 rng(92);
        const auto h = fixtures::random_trajectory(rng, 5, 3, 4);
        const auto bytes = fixtures::to_bytes(h);
        auto message = [](const std::function<void()>& fn) -> std::string {
            try {
                fn();
            } catch (const Error& e) {
                return e.what();
            }
            return "no error";
        };
        std::string magic = bytes;
        magic.replace(0, 4, "XXXX");
        const auto m1 = message([&] {
            std::istringstream in(magic);
            trajstore::read_trajectory(in);
        });
        const std::size_t step = 3 * 4 * 4;
        const std::string cut = bytes.substr(0, bytes.size() - 1);
        const auto m2 = message([&] {
            std::istringstream in(cut);
            trajstore::read_trajectory(in);
        });
        // The missing byte belongs to the last step, so the reader fails there.
        const std::size_t expected_step = (cut.size() - trajstore::kStrjHeaderBytes) / step + 1;
        const std::string want2 = "truncated at step " + std::to_string(expected_step);
        trajstore::DeltaGrid g;
        g.tokens = 2;
        g.layers = 2;
        g.dt = Grid(1, 2, 1.0);
        g.dl = Grid(2, 1, -1.0);
        std::ostringstream gout;
        trajstore::write_delta_grid(g, gout);
        const auto m3 = message([&] {
            std::istringstream in(gout.str());
            trajstore::read_delta_grid(in);
        });
        std::string gmagic = gout.str();
        gmagic[1] = 'X';
        const auto m4 = message([&] {
            std::istringstream in(gmagic);
            trajstore::read_delta_grid(in);
        });
        const bool ok = m1 == "bad magic" && m2.rfind(want2, 0) == 0 && m3 == "corrupt grid" && m4 == "bad magic";
        return std::pair{ok, "'" + m1 + "', '" + m2 + "', '" + m3 + "', '" + m4 + "'"};
    });

    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
