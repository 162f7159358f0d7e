#include "stalt/evalstats.hpp"

#include "stalt/error.hpp"
#include "stalt/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace stalt::evalstats {

namespace {

constexpr std::size_t kMaxAttempts = 10;

void require_both_classes(const LabeledScores& data) {
    data.check();
    if (data.positives() == 0 || data.negatives() == 0) throw Error("degenerate labels");
}

// Indices sorted by descending score; equal scores form contiguous blocks.
std::vector<std::size_t> order_descending(const LabeledScores& data) {
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return data.scores[a] > data.scores[b]; });
    return idx;
}

// Calls visit(tp, fp) after each block of tied scores, walking thresholds
// from the highest score down.
template <typename Visit>
void sweep_thresholds(const LabeledScores& data, Visit&& visit) {
    const auto idx = order_descending(data);
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        std::size_t block_tp = 0;
        while (j < idx.size() && data.scores[idx[j]] == data.scores[idx[i]]) {
            if (data.labels[idx[j]]) ++block_tp;
            ++j;
        }
        tp += block_tp;
        fp += (j - i) - block_tp;
        visit(tp, fp, block_tp);
        i = j;
    }
}

double mean_of(std::span<const double> v) {
    double total = 0.0;
    for (double x : v) total += x;
    return total / static_cast<double>(v.size());
}

}  // namespace

std::size_t LabeledScores::positives() const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));
}

void LabeledScores::check() const {
    if (scores.empty()) throw Error("no scores");
    if (labels.size() != scores.size()) throw Error("scores and labels differ in length");
    if (!lengths.empty() && lengths.size() != scores.size()) throw Error("lengths differ in length from scores");
    if (!groups.empty() && groups.size() != scores.size()) throw Error("groups differ in length from scores");
    for (double s : scores) {
        if (std::isnan(s)) throw Error("NaN score");
    }
}

LabeledScores LabeledScores::subset(std::span<const std::size_t> indices) const {
    LabeledScores out;
    out.scores.reserve(indices.size());
    out.labels.reserve(indices.size());
    for (std::size_t i : indices) {
        out.scores.push_back(scores[i]);
        out.labels.push_back(labels[i]);
        if (!lengths.empty()) out.lengths.push_back(lengths[i]);
        if (!groups.empty()) out.groups.push_back(groups[i]);
    }
    return out;
}

// Mann-Whitney U from mid-ranks: ties between a positive and a negative count 0.5.
double auroc(const LabeledScores& data) {
    require_both_classes(data);
    const std::size_t n = data.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return data.scores[a] < data.scores[b]; });
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        std::size_t pos = 0;
        while (j < n && data.scores[idx[j]] == data.scores[idx[i]]) {
            if (data.labels[idx[j]]) ++pos;
            ++j;
        }
        const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1..j
        rank_sum += mid_rank * static_cast<double>(pos);
        i = j;
    }
    const auto p = static_cast<double>(data.positives());
    const auto q = static_cast<double>(data.negatives());
    return (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

double fpr_at_tpr(const LabeledScores& data, double tpr_target) {
    require_both_classes(data);
    if (!(tpr_target > 0.0 && tpr_target <= 1.0)) throw Error("TPR target must be in (0, 1]");
    const auto p = static_cast<double>(data.positives());
    const auto q = static_cast<double>(data.negatives());
    double best = 1.0;
    sweep_thresholds(data, [&](std::size_t tp, std::size_t fp, std::size_t) {
        if (static_cast<double>(tp) / p >= tpr_target - 1e-12) best = std::min(best, static_cast<double>(fp) / q);
    });
    return best;
}

// Average precision with tied scores treated as one threshold: every positive
// in a tied block gets the precision measured at the end of the block.
double aupr(const LabeledScores& data) {
    data.check();
    const std::size_t positives = data.positives();
    if (positives == 0) throw Error("no positive labels");
    double total = 0.0;
    sweep_thresholds(data, [&](std::size_t tp, std::size_t fp, std::size_t block_tp) {
        if (block_tp > 0) total += static_cast<double>(block_tp) * static_cast<double>(tp) / static_cast<double>(tp + fp);
    });
    return total / static_cast<double>(positives);
}

double hedges_g(std::span<const double> correct, std::span<const double> incorrect) {
    const std::size_t n1 = correct.size();
    const std::size_t n2 = incorrect.size();
    if (n1 < 2 || n2 < 2) throw Error("group too small");
    const double m1 = mean_of(correct);
    const double m2 = mean_of(incorrect);
    double ss1 = 0.0, ss2 = 0.0;
    for (double x : correct) ss1 += (x - m1) * (x - m1);
    for (double x : incorrect) ss2 += (x - m2) * (x - m2);
    const auto df = static_cast<double>(n1 + n2 - 2);
    const double pooled = (ss1 + ss2) / df;
    if (!(pooled > 0.0)) throw Error("degenerate variance");
    const double j = 1.0 - 3.0 / (4.0 * df - 1.0);
    return j * (m1 - m2) / std::sqrt(pooled);
}

namespace {

void split_by_label(const LabeledScores& data, std::vector<double>& correct, std::vector<double>& incorrect) {
    for (std::size_t i = 0; i < data.size(); ++i) (data.labels[i] ? correct : incorrect).push_back(data.scores[i]);
}

}  // namespace

double hedges_g(const LabeledScores& data) {
    data.check();
    std::vector<double> correct, incorrect;
    split_by_label(data, correct, incorrect);
    return hedges_g(correct, incorrect);
}

double mean_difference(const LabeledScores& data) {
    require_both_classes(data);
    std::vector<double> correct, incorrect;
    split_by_label(data, correct, incorrect);
    return mean_of(correct) - mean_of(incorrect);
}

// ---------------------------------------------------------------------------
// bootstrap

std::uint64_t SplitMix64::mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t SplitMix64::next() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix(state_);
}

std::uint64_t SplitMix64::below(std::uint64_t bound) {
    if (bound == 0) throw Error("empty range");
    unsigned __int128 m = static_cast<unsigned __int128>(next()) * bound;
    auto low = static_cast<std::uint64_t>(m);
    if (low < bound) {
        const std::uint64_t threshold = (0 - bound) % bound;
        while (low < threshold) {
            m = static_cast<unsigned __int128>(next()) * bound;
            low = static_cast<std::uint64_t>(m);
        }
    }
    return static_cast<std::uint64_t>(m >> 64);
}

double SplitMix64::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

std::uint64_t resample_stream_seed(std::uint64_t seed, std::uint64_t resample, std::uint64_t attempt) {
    return SplitMix64::mix(SplitMix64::mix(seed) ^ ((resample << 4) | (attempt & 0xfu)));
}

double quantile_sorted(std::span<const double> sorted, double q) {
    if (sorted.empty()) throw Error("quantile of empty sample");
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

Interval bootstrap_ci(const Statistic& statistic, const LabeledScores& data, const BootstrapOptions& options) {
    data.check();
    if (options.resamples < 1) throw Error("resamples must be ≥ 1");
    if (!(options.level > 0.0 && options.level < 1.0)) throw Error("level must be in (0, 1)");
    const std::size_t n = data.size();
    std::vector<double> values(options.resamples, 0.0);
    std::vector<std::uint8_t> ok(options.resamples, 0);
    parallel_for(options.resamples, options.workers, [&](std::size_t r) {
        std::vector<std::size_t> idx(n);
        for (std::size_t attempt = 0; attempt < kMaxAttempts; ++attempt) {
            SplitMix64 rng(resample_stream_seed(options.seed, r, attempt));
            for (auto& i : idx) i = static_cast<std::size_t>(rng.below(n));
            try {
                values[r] = statistic(data.subset(idx));
                ok[r] = 1;
                return;
            } catch (const Error&) {
            }
        }
    });
    if (std::find(ok.begin(), ok.end(), std::uint8_t{0}) != ok.end()) throw Error("statistic undefined on resamples");
    std::sort(values.begin(), values.end());
    const double tail = (1.0 - options.level) / 2.0;
    Interval out;
    out.lo = quantile_sorted(values, tail);
    out.hi = quantile_sorted(values, 1.0 - tail);
    out.level = options.level;
    out.resamples = options.resamples;
    out.seed = options.seed;
    return out;
}

// ---------------------------------------------------------------------------
// breakdowns

std::vector<LengthBin> length_stratified_auroc(const LabeledScores& data, std::size_t bins) {
    data.check();
    if (!data.has_lengths()) throw Error("lengths required for stratification");
    if (bins < 1) throw Error("bins must be ≥ 1");
    const std::size_t n = data.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return data.lengths[a] < data.lengths[b]; });

    std::vector<std::vector<std::size_t>> members(bins);
    std::size_t current_bin = 0;
    for (std::size_t rank = 0; rank < n; ++rank) {
        const bool tied = rank > 0 && data.lengths[idx[rank]] == data.lengths[idx[rank - 1]];
        if (!tied) current_bin = rank * bins / n;
        members[current_bin].push_back(idx[rank]);
    }

    std::vector<LengthBin> out(bins);
    for (std::size_t b = 0; b < bins; ++b) {
        auto& bin = out[b];
        const auto& m = members[b];
        bin.n = m.size();
        if (m.empty()) continue;
        bin.min_length = data.lengths[m.front()];
        bin.max_length = data.lengths[m.back()];
        const LabeledScores sub = data.subset(m);
        bin.n_correct = sub.positives();
        bin.n_incorrect = sub.negatives();
        if (bin.n_correct > 0 && bin.n_incorrect > 0) bin.auroc = auroc(sub);
    }
    return out;
}

std::vector<GroupGap> group_gap_report(const LabeledScores& data, const BootstrapOptions& options) {
    data.check();
    if (!data.has_groups()) throw Error("group tags required");
    std::map<std::string, std::vector<std::size_t>> by_group;
    for (std::size_t i = 0; i < data.size(); ++i) by_group[data.groups[i]].push_back(i);

    std::vector<GroupGap> out;
    for (const auto& [name, indices] : by_group) {
        GroupGap gap;
        gap.group = name;
        const LabeledScores sub = data.subset(indices);
        gap.n = sub.size();
        gap.n_correct = sub.positives();
        gap.n_incorrect = sub.negatives();
        try {
            gap.g = hedges_g(sub);
        } catch (const Error& e) {
            gap.reason = e.what();
            out.push_back(std::move(gap));
            continue;
        }
        try {
            gap.ci = bootstrap_ci([](const LabeledScores& s) { return hedges_g(s); }, sub, options);
        } catch (const Error& e) {
            gap.reason = std::string("bootstrap: ") + e.what();
        }
        out.push_back(std::move(gap));
    }
    return out;
}

MetricReport evaluate(const std::string& metric, const LabeledScores& data, const EvalOptions& options) {
    require_both_classes(data);
    MetricReport report;
    report.metric = metric;
    report.n_correct = data.positives();
    report.n_incorrect = data.negatives();
    report.auroc = auroc(data);
    report.fpr95 = fpr_at_tpr(data, 0.95);
    report.aupr = aupr(data);
    try {
        report.hedges_g = hedges_g(data);
    } catch (const Error& e) {
        report.note = std::string("hedges_g: ") + e.what();
    }
    try {
        report.auroc_ci = bootstrap_ci([](const LabeledScores& s) { return auroc(s); }, data, options.bootstrap);
    } catch (const Error& e) {
        if (!report.note.empty()) report.note += "; ";
        report.note += std::string("auroc_ci: ") + e.what();
    }
    if (report.hedges_g) {
        try {
            report.g_ci = bootstrap_ci([](const LabeledScores& s) { return hedges_g(s); }, data, options.bootstrap);
        } catch (const Error& e) {
            if (!report.note.empty()) report.note += "; ";
            report.note += std::string("g_ci: ") + e.what();
        }
    }
    if (options.length_bins > 0 && data.has_lengths()) {
        report.length_bins = length_stratified_auroc(data, options.length_bins);
    }
    return report;
}

}  // namespace stalt::evalstats
