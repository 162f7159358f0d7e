#pragma once

#include "stalt/delta.hpp"
#include "stalt/grid.hpp"
#include "stalt/trajstore.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

// Scalar correctness scores. Every score is oriented so that larger values
// predict a correct generation; the three negated baselines (gen_tokens,
// perplexity, entropy) carry their sign here and nowhere else.
namespace stalt::metrics {

enum class MetricId {
    stalt,
    stalt_reversed,
    mean_time_l2,
    mean_layer_l2,
    mean_time_cos,
    mean_layer_cos,
    gen_tokens,
    max_prob,
    perplexity,
    entropy,
    coe_r,
    coe_c,
};

std::string_view metric_name(MetricId id);
MetricId parse_metric_id(std::string_view name);
const std::vector<MetricId>& all_metrics();
bool uses_temperature(MetricId id);

// Softmax temperature. Zero and infinity are the hard-selection and uniform
// limits, evaluated symbolically rather than as extreme finite values.
struct Temperature {
    enum class Kind { finite, zero, infinity };
    Kind kind = Kind::finite;
    double value = 1.0;

    static Temperature of(double tau);
    static Temperature zero() { return {Kind::zero, 0.0}; }
    static Temperature infinity() { return {Kind::infinity, 0.0}; }
    // Accepts a positive number, "0" for the hard limit and "inf" for the uniform limit.
    static Temperature parse(std::string_view text);

    std::string to_string() const;
};

struct SegmentSelector {
    std::string name;
};

struct TruncationSelector {
    double fraction = 1.0;  // keep the first floor(fraction * T) tokens
};

using Selector = std::variant<std::monostate, SegmentSelector, TruncationSelector>;

std::string selector_to_string(const Selector& selector);

struct MetricConfig {
    MetricId id = MetricId::stalt;
    Temperature tau;
    Selector selector;

    // Column label, e.g. "stalt", "stalt:tau=0", "max_prob:segment=think".
    std::string label() const;
};

// "name[:tau=X][:segment=S][:truncate=P]"
MetricConfig parse_metric_config(std::string_view spec);
// Comma-separated list of metric specs.
std::vector<MetricConfig> parse_metric_list(std::string_view list);

// Token mask over the generated tokens (one entry per token, 1 = selected).
struct TokenSelection {
    std::vector<std::uint8_t> mask;
    std::size_t count = 0;

    bool covers_all() const { return count == mask.size(); }
    // Adjacent pairs (t-1, t) with both tokens selected, indexed by t-1 (zero-based).
    std::vector<std::size_t> pair_rows() const;
    std::vector<std::size_t> token_rows() const;
};

TokenSelection select_indices(std::uint64_t tokens, std::span<const trajstore::SegmentSpan> segments,
                              const Selector& selector);

std::vector<double> layer_weights(std::span<const double> row, const Temperature& tau);

double stalt(const delta::AlignedGrids& aligned, const Temperature& tau);
double stalt_reversed(const delta::AlignedGrids& aligned, const Temperature& tau);

double grid_mean(const Grid& grid);
inline double mean_time_l2(const Grid& dt) { return grid_mean(dt); }
inline double mean_layer_l2(const Grid& dl) { return grid_mean(dl); }
inline double mean_time_cos(const Grid& ct) { return grid_mean(ct); }
inline double mean_layer_cos(const Grid& cl) { return grid_mean(cl); }

double gen_tokens_score(std::uint64_t selected_tokens);
double max_prob_score(std::span<const double> max_prob);
double perplexity_score(std::span<const double> chosen_logprob);
double entropy_score(std::span<const double> entropy);

// Chain-of-embedding scores over an (L+1)xD layer summary. `degenerate` is set
// when an angle involved a near-zero vector and was defined as 0.
double coe_r(const Grid& summary, bool* degenerate = nullptr);
double coe_c(const Grid& summary, bool* degenerate = nullptr);

// Row subsets used to apply a token selection to the grids.
Grid select_rows(const Grid& grid, std::span<const std::size_t> rows);
delta::AlignedGrids restrict_aligned(const delta::AlignedGrids& aligned, const TokenSelection& selection);
std::vector<double> select_values(std::span<const double> values, const TokenSelection& selection);

struct ScoreRow {
    std::string record_id;
    std::optional<bool> label;
    std::optional<std::uint64_t> length;
    std::optional<std::string> group;
    std::vector<std::optional<double>> scores;  // parallel to ScoreTable::metrics
    std::vector<std::string> errors;            // "<metric label>: <reason>"
};

struct ScoreTable {
    std::vector<std::string> metrics;
    std::vector<ScoreRow> rows;

    std::optional<std::size_t> metric_index(std::string_view label) const;
};

struct ScoreOptions {
    std::size_t workers = 1;
};

ScoreTable score_dataset(std::span<const trajstore::GenerationRecord> records, std::span<const MetricConfig> configs,
                         const ScoreOptions& options = {});

}  // namespace stalt::metrics
