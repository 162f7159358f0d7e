#include "stalt/analysis.hpp"

#include "stalt/csv.hpp"
#include "stalt/error.hpp"
#include "stalt/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace stalt::analysis {

Grid resample_grid(const Grid& grid, std::size_t bins) {
    if (grid.empty()) throw Error("empty grid");
    if (bins < 2) throw Error("bins must be ≥ 2");
    Grid out(bins, grid.cols);
    const std::size_t r = grid.rows;
    for (std::size_t b = 0; b < bins; ++b) {
        if (r == 1) {
            std::copy(grid.row(0).begin(), grid.row(0).end(), out.row(b).begin());
            continue;
        }
        // Source coordinate b*(R-1)/(B-1), split exactly into integer and fractional parts.
        const std::size_t num = b * (r - 1);
        const std::size_t i0 = num / (bins - 1);
        const std::size_t i1 = std::min(i0 + 1, r - 1);
        const double frac = static_cast<double>(num % (bins - 1)) / static_cast<double>(bins - 1);
        for (std::size_t c = 0; c < grid.cols; ++c) {
            const double a = grid(i0, c);
            const double z = grid(i1, c);
            const double v = a + frac * (z - a);
            out(b, c) = std::clamp(v, std::min(a, z), std::max(a, z));
        }
    }
    return out;
}

std::string_view quantity_name(Quantity q) { return q == Quantity::dtime ? "dtime" : "dlayer"; }

Quantity parse_quantity(std::string_view name) {
    if (name == "dtime") return Quantity::dtime;
    if (name == "dlayer") return Quantity::dlayer;
    throw Error("unknown quantity " + std::string(name));
}

namespace {

// Pairwise sum of the grids at positions [lo, hi) of `order`.
std::vector<double> pairwise_sum(const std::vector<Grid>& grids, const std::vector<std::size_t>& order, std::size_t lo,
                                 std::size_t hi) {
    if (hi - lo == 1) return grids[order[lo]].values;
    const std::size_t mid = lo + (hi - lo) / 2;
    auto left = pairwise_sum(grids, order, lo, mid);
    const auto right = pairwise_sum(grids, order, mid, hi);
    for (std::size_t i = 0; i < left.size(); ++i) left[i] += right[i];
    return left;
}

}  // namespace

HeatmapGrid difference_heatmap(std::span<const LabeledGrid> records, Quantity quantity, std::size_t bins,
                               std::size_t workers) {
    if (bins < 2) throw Error("bins must be ≥ 2");
    std::vector<std::size_t> correct, incorrect;
    for (std::size_t i = 0; i < records.size(); ++i) (records[i].correct ? correct : incorrect).push_back(i);
    if (correct.empty() || incorrect.empty()) throw Error("cohort empty");
    const std::size_t cols = records.front().grid.cols;
    for (const auto& r : records) {
        if (r.grid.cols != cols) throw Error("incompatible layer axes");
    }

    std::vector<Grid> resampled(records.size());
    parallel_for(records.size(), workers, [&](std::size_t i) { resampled[i] = resample_grid(records[i].grid, bins); });

    const auto sum_c = pairwise_sum(resampled, correct, 0, correct.size());
    const auto sum_i = pairwise_sum(resampled, incorrect, 0, incorrect.size());
    HeatmapGrid out;
    out.quantity = quantity;
    out.first_layer = quantity == Quantity::dlayer ? 1 : 0;
    out.n_correct = correct.size();
    out.n_incorrect = incorrect.size();
    out.values = Grid(bins, cols);
    const auto nc = static_cast<double>(correct.size());
    const auto ni = static_cast<double>(incorrect.size());
    for (std::size_t k = 0; k < out.values.size(); ++k) out.values.values[k] = sum_c[k] / nc - sum_i[k] / ni;
    return out;
}

HeatmapGrid difference_heatmap(std::span<const trajstore::GenerationRecord> records, Quantity quantity,
                               std::size_t bins, std::size_t workers) {
    std::vector<const trajstore::GenerationRecord*> labeled;
    for (const auto& r : records) {
        if (r.label) labeled.push_back(&r);
    }
    std::vector<LabeledGrid> grids(labeled.size());
    parallel_for(labeled.size(), workers, [&](std::size_t i) {
        const auto& r = *labeled[i];
        if (!r.tensor_refs.delta_grid) throw Error("record " + r.id + ": missing input: delta grids");
        try {
            auto g = trajstore::read_delta_grid_file(r.resolve(*r.tensor_refs.delta_grid));
            grids[i].grid = quantity == Quantity::dtime ? std::move(g.dt) : std::move(g.dl);
        } catch (const Error& e) {
            throw Error("record " + r.id + ": " + e.what());
        }
        grids[i].correct = *r.label;
    });
    return difference_heatmap(grids, quantity, bins, workers);
}

std::string heatmap_csv(const HeatmapGrid& heatmap) {
    std::ostringstream out;
    out << "bin,layer,value\n";
    for (std::size_t b = 0; b < heatmap.values.rows; ++b) {
        for (std::size_t c = 0; c < heatmap.values.cols; ++c) {
            out << b << ',' << c + heatmap.first_layer << ',' << csv::format_double(heatmap.values(b, c)) << '\n';
        }
    }
    return out.str();
}

std::string heatmap_json(const HeatmapGrid& heatmap) {
    nlohmann::json doc;
    doc["quantity"] = quantity_name(heatmap.quantity);
    doc["bins"] = heatmap.values.rows;
    doc["first_layer"] = heatmap.first_layer;
    doc["layers"] = heatmap.values.cols;
    doc["n_correct"] = heatmap.n_correct;
    doc["n_incorrect"] = heatmap.n_incorrect;
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t b = 0; b < heatmap.values.rows; ++b) {
        const auto row = heatmap.values.row(b);
        rows.push_back(std::vector<double>(row.begin(), row.end()));
    }
    doc["values"] = std::move(rows);
    return doc.dump(1) + "\n";
}

// ---------------------------------------------------------------------------
// synthetic cohorts

void SynthSpec::check() const {
    if (n < 2) throw Error("unsatisfiable spec: n must be ≥ 2");
    if (t_min < 2 || t_max < t_min) throw Error("unsatisfiable spec: need 2 ≤ t_min ≤ t_max");
    if (layers < 1) throw Error("unsatisfiable spec: need at least one layer");
    if (width < 1) throw Error("unsatisfiable spec: width must be ≥ 1");
    if (!(noise > 0.0) || !std::isfinite(noise)) throw Error("unsatisfiable spec: noise must be positive");
    if (!(multiplier > 1.0) || !std::isfinite(multiplier)) throw Error("unsatisfiable spec: multiplier must be > 1");
    if (!(correct_fraction > 0.0 && correct_fraction < 1.0)) {
        throw Error("unsatisfiable spec: correct fraction must be in (0, 1)");
    }
    if (hotspot_layers.empty()) throw Error("unsatisfiable spec: no hotspot layers");
    for (auto l : hotspot_layers) {
        if (l < 1 || l > layers) {
            throw Error("unsatisfiable spec: hotspot layer " + std::to_string(l) + " outside 1.." + std::to_string(layers));
        }
    }
    const auto correct = static_cast<std::size_t>(std::llround(correct_fraction * static_cast<double>(n)));
    if (correct == 0 || correct == n) throw Error("unsatisfiable spec: cohort would be single-class");
}

SynthSpec synth_preset(std::string_view name) {
    SynthSpec spec;
    if (name == "hotspot") return spec;
    if (name == "two-group") {
        spec.two_group = true;
        return spec;
    }
    throw Error("unknown preset " + std::string(name));
}

namespace {

constexpr double kHotspotJump = 20.0;  // offset step into a hotspot layer, in noise units
constexpr double kPlainJump = 3.0;
constexpr double kTopLayerNoise = 3.0;  // louder temporal noise on the last layer
constexpr double kScaleSigma = 0.15;    // lognormal spread of the per-record scale
constexpr double kVocab = 50.0;         // nominal vocabulary for the token statistics

struct SynthRecord {
    std::string id;
    bool correct = false;
    bool amplified = false;
    std::string group;
    std::uint64_t tokens = 0;
};

std::vector<double> random_unit(std::mt19937_64& rng, std::size_t d) {
    std::normal_distribution<double> normal;
    std::vector<double> v(d);
    double norm = 0.0;
    do {
        norm = 0.0;
        for (auto& x : v) {
            x = normal(rng);
            norm += x * x;
        }
    } while (norm < 1e-12);
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    return v;
}

void write_synth_trajectory(const SynthSpec& spec, const SynthRecord& rec, std::mt19937_64& rng,
                            const fs::path& path) {
    const std::size_t lp = spec.layers + 1;
    const std::size_t d = spec.width;
    std::normal_distribution<double> normal;

    // Per-layer offsets, built as a walk whose big steps land on the hotspots.
    std::vector<double> offsets(lp * d);
    {
        const auto base = random_unit(rng, d);
        for (std::size_t k = 0; k < d; ++k) offsets[k] = 5.0 * spec.noise * base[k];
        for (std::size_t l = 1; l < lp; ++l) {
            const bool hot = std::find(spec.hotspot_layers.begin(), spec.hotspot_layers.end(), l) !=
                             spec.hotspot_layers.end();
            const double jump = (hot ? kHotspotJump : kPlainJump) * spec.noise * (1.0 + 0.1 * normal(rng));
            const auto dir = random_unit(rng, d);
            for (std::size_t k = 0; k < d; ++k) offsets[l * d + k] = offsets[(l - 1) * d + k] + jump * dir[k];
        }
    }
    const double scale = std::exp(kScaleSigma * normal(rng));
    std::vector<double> amplitude(lp, spec.noise * scale);
    amplitude[lp - 1] = kTopLayerNoise * spec.noise * scale;
    if (rec.amplified) {
        for (auto l : spec.hotspot_layers) amplitude[l] *= spec.multiplier;
    }

    trajstore::TrajectoryShape shape{rec.tokens, lp, d, spec.dtype};
    auto out = trajstore::open_output(path);
    trajstore::TrajectoryWriter writer(out, shape);
    std::vector<double> block(lp * d);
    for (std::uint64_t t = 0; t < rec.tokens; ++t) {
        for (std::size_t l = 0; l < lp; ++l) {
            for (std::size_t k = 0; k < d; ++k) block[l * d + k] = offsets[l * d + k] + amplitude[l] * normal(rng);
        }
        writer.append_step(block);
    }
    writer.finish();
    out.close();
    if (!out) throw Error("cannot write " + path.string());
}

// Peaked next-token distributions: one token carries max_prob, the rest share
// the remainder evenly. Correct records sit at a slightly higher confidence.
trajstore::TokenStats synth_token_stats(const SynthRecord& rec, std::mt19937_64& rng) {
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double confidence = 1.0 + (rec.correct ? 0.25 : 0.0) + 0.5 * normal(rng);
    trajstore::TokenStats stats;
    for (std::uint64_t t = 0; t < rec.tokens; ++t) {
        const double logit = confidence + normal(rng);
        const double p = std::clamp(1.0 / (1.0 + std::exp(-logit)), 0.05, 1.0 - 1e-6);
        const double rest = 1.0 - p;
        const double chosen = unif(rng) < 0.85 ? p : std::min(p, rest * (0.05 + 0.95 * unif(rng)));
        const double entropy = -p * std::log(p) - rest * std::log(rest / (kVocab - 1.0));
        stats.max_prob.push_back(p);
        stats.chosen_logprob.push_back(std::log(chosen));
        stats.entropy.push_back(std::max(0.0, entropy));
    }
    return stats;
}

}  // namespace

SynthResult synth_cohort(const SynthSpec& spec, const fs::path& out_dir) {
    spec.check();
    std::mt19937_64 rng(spec.seed);

    const auto n_correct = static_cast<std::size_t>(std::llround(spec.correct_fraction * static_cast<double>(spec.n)));
    std::vector<bool> labels(spec.n, false);
    std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n_correct), true);
    std::shuffle(labels.begin(), labels.end(), rng);

    std::uniform_int_distribution<std::uint64_t> length(spec.t_min, spec.t_max);
    std::uniform_int_distribution<int> gold_dist(1, 999);
    std::uniform_int_distribution<int> miss_dist(1, 9);

    trajstore::Manifest manifest;
    manifest.dataset = spec.two_group ? "synthetic-two-group" : "synthetic-hotspot";
    manifest.extra["generator"] = {
        {"seed", spec.seed},
        {"n", spec.n},
        {"layers", spec.layers},
        {"width", spec.width},
        {"hotspot_layers", spec.hotspot_layers},
        {"multiplier", spec.multiplier},
        {"noise", spec.noise},
        {"correct_fraction", spec.correct_fraction},
        {"dtype", std::string(trajstore::dtype_name(spec.dtype))},
    };

    std::ostringstream gold_csv;
    gold_csv << "id,answer\n";
    const std::size_t digits = std::to_string(spec.n).size();
    for (std::size_t i = 0; i < spec.n; ++i) {
        SynthRecord rec;
        std::string num = std::to_string(i + 1);
        rec.id = "synth-" + std::string(digits - std::min(digits, num.size()), '0') + num;
        rec.correct = labels[i];
        rec.group = spec.two_group ? (i % 2 == 0 ? "A" : "B") : "";
        rec.amplified = rec.correct && (!spec.two_group || rec.group == "A");
        rec.tokens = length(rng);

        const fs::path traj_rel = fs::path("traj") / (rec.id + ".strj");
        write_synth_trajectory(spec, rec, rng, out_dir / traj_rel);
        auto stats = synth_token_stats(rec, rng);

        const int gold = gold_dist(rng);
        const int given = rec.correct ? gold : gold + miss_dist(rng);

        trajstore::GenerationRecord r;
        r.id = rec.id;
        r.model = "synthetic";
        r.dataset = manifest.dataset;
        if (spec.two_group) r.group = rec.group;
        r.label = rec.correct;
        r.text = "<think> synthetic reasoning trace </think> The final answer is \\boxed{" + std::to_string(given) + "}.";
        r.num_tokens = rec.tokens;
        r.gold = std::to_string(gold);
        const std::uint64_t think_end = std::max<std::uint64_t>(1, (rec.tokens * 4) / 5);
        r.segments.push_back({"think", 1, think_end});
        if (think_end < rec.tokens) r.segments.push_back({"answer", think_end + 1, rec.tokens});
        r.tensor_refs.trajectory = traj_rel.generic_string();
        if (rec.tokens > trajstore::kInlineTokenStatsLimit) {
            const fs::path toks_rel = fs::path("toks") / (rec.id + ".toks");
            auto out = trajstore::open_output(out_dir / toks_rel);
            trajstore::write_token_stats(stats, out);
            r.tensor_refs.token_stats = toks_rel.generic_string();
        } else {
            r.token_stats = std::move(stats);
        }
        r.base_dir = out_dir;
        manifest.records.push_back(std::move(r));
        gold_csv << rec.id << ',' << gold << '\n';
    }

    SynthResult result;
    result.gold_path = out_dir / "gold.csv";
    {
        auto out = trajstore::open_output(result.gold_path);
        out << gold_csv.str();
        if (!out) throw Error("cannot write " + result.gold_path.string());
    }
    result.manifest_path = out_dir / "manifest.json";
    trajstore::save_manifest(manifest, result.manifest_path);
    result.manifest = trajstore::load_manifest(result.manifest_path);
    return result;
}

}  // namespace stalt::analysis
