#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

// Threshold-free classification metrics, effect sizes, and bootstrap
// intervals for scores where larger means "predicted correct".
namespace stalt::evalstats {

struct LabeledScores {
    std::vector<double> scores;
    std::vector<bool> labels;  // true = correct
    std::vector<std::uint64_t> lengths;  // optional, parallel when present
    std::vector<std::string> groups;     // optional, parallel when present

    std::size_t size() const { return scores.size(); }
    std::size_t positives() const;
    std::size_t negatives() const { return size() - positives(); }
    bool has_lengths() const { return !lengths.empty(); }
    bool has_groups() const { return !groups.empty(); }

    // Throws when arrays differ in length, are empty, or hold NaN scores.
    void check() const;
    LabeledScores subset(std::span<const std::size_t> indices) const;
};

double auroc(const LabeledScores& data);
double fpr_at_tpr(const LabeledScores& data, double tpr_target = 0.95);
double aupr(const LabeledScores& data);

double hedges_g(std::span<const double> correct, std::span<const double> incorrect);
double hedges_g(const LabeledScores& data);
double mean_difference(const LabeledScores& data);

// SplitMix64. Every bootstrap resample draws from its own stream, seeded from
// (seed, resample index, attempt), so serial and parallel runs agree bitwise.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t state) : state_(state) {}
    std::uint64_t next();
    // Uniform integer in [0, bound) by Lemire's multiply-shift with rejection.
    std::uint64_t below(std::uint64_t bound);
    // Uniform double in [0, 1) from the top 53 bits.
    double uniform();

    static std::uint64_t mix(std::uint64_t z);

private:
    std::uint64_t state_;
};

std::uint64_t resample_stream_seed(std::uint64_t seed, std::uint64_t resample, std::uint64_t attempt);

struct BootstrapOptions {
    std::size_t resamples = 4000;
    double level = 0.95;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
};

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
    double level = 0.95;
    std::size_t resamples = 0;
    std::uint64_t seed = 0;
};

// A statistic signals "undefined on this sample" by throwing stalt::Error.
using Statistic = std::function<double(const LabeledScores&)>;

// Percentile interval over record-level resamples with replacement. Each
// resample retries on an undefined statistic, up to 10 attempts, which bounds
// the total at 10x the resample count.
Interval bootstrap_ci(const Statistic& statistic, const LabeledScores& data, const BootstrapOptions& options = {});

// Linear-interpolated quantile of sorted values, q in [0, 1].
double quantile_sorted(std::span<const double> sorted, double q);

struct LengthBin {
    std::uint64_t min_length = 0;
    std::uint64_t max_length = 0;
    std::size_t n = 0;
    std::size_t n_correct = 0;
    std::size_t n_incorrect = 0;
    std::optional<double> auroc;  // undefined unless both classes present
};

// Equal-count quantile bins by length; records sharing a length go to the
// lowest bin any of them would occupy.
std::vector<LengthBin> length_stratified_auroc(const LabeledScores& data, std::size_t bins = 4);

struct GroupGap {
    std::string group;
    std::size_t n = 0;
    std::size_t n_correct = 0;
    std::size_t n_incorrect = 0;
    std::optional<double> g;
    std::optional<Interval> ci;
    std::string reason;  // why g is undefined, empty otherwise
};

std::vector<GroupGap> group_gap_report(const LabeledScores& data, const BootstrapOptions& options = {});

struct MetricReport {
    std::string metric;
    std::size_t n_correct = 0;
    std::size_t n_incorrect = 0;
    double auroc = 0.0;
    double fpr95 = 0.0;
    double aupr = 0.0;
    std::optional<double> hedges_g;
    std::optional<Interval> auroc_ci;
    std::optional<Interval> g_ci;
    std::vector<LengthBin> length_bins;
    std::string note;
};

struct EvalOptions {
    BootstrapOptions bootstrap;
    std::size_t length_bins = 0;  // 0 disables stratification
};

MetricReport evaluate(const std::string& metric, const LabeledScores& data, const EvalOptions& options = {});

}  // namespace stalt::evalstats
