#include "stalt/metrics.hpp"

#include "stalt/error.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <numbers>
#include <sstream>

namespace stalt::metrics {

namespace {

constexpr std::array<std::pair<MetricId, std::string_view>, 12> kNames = {{
    {MetricId::stalt, "stalt"},
    {MetricId::stalt_reversed, "stalt_reversed"},
    {MetricId::mean_time_l2, "mean_time_l2"},
    {MetricId::mean_layer_l2, "mean_layer_l2"},
    {MetricId::mean_time_cos, "mean_time_cos"},
    {MetricId::mean_layer_cos, "mean_layer_cos"},
    {MetricId::gen_tokens, "gen_tokens"},
    {MetricId::max_prob, "max_prob"},
    {MetricId::perplexity, "perplexity"},
    {MetricId::entropy, "entropy"},
    {MetricId::coe_r, "coe_r"},
    {MetricId::coe_c, "coe_c"},
}};

constexpr double kCoeEpsilon = 1e-12;
constexpr double kMaxMeanNll = 700.0;

double parse_double(std::string_view text, std::string_view what) {
    double value = 0.0;
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end) throw Error("invalid " + std::string(what) + " '" + std::string(text) + "'");
    return value;
}

// Shortest decimal form that round-trips, for labels.
std::string format_number(double v) {
    for (int p = 1; p <= 17; ++p) {
        std::ostringstream candidate;
        candidate.precision(p);
        candidate << v;
        if (std::stod(candidate.str()) == v) return candidate.str();
    }
    return std::to_string(v);
}

void require_non_empty(std::size_t n) {
    if (n == 0) throw Error("empty selection");
}

}  // namespace

std::string_view metric_name(MetricId id) {
    for (const auto& [metric, name] : kNames) {
        if (metric == id) return name;
    }
    return "?";
}

MetricId parse_metric_id(std::string_view name) {
    for (const auto& [metric, n] : kNames) {
        if (n == name) return metric;
    }
    throw Error("unknown metric '" + std::string(name) + "'");
}

const std::vector<MetricId>& all_metrics() {
    static const std::vector<MetricId> ids = [] {
        std::vector<MetricId> v;
        for (const auto& entry : kNames) v.push_back(entry.first);
        return v;
    }();
    return ids;
}

bool uses_temperature(MetricId id) { return id == MetricId::stalt || id == MetricId::stalt_reversed; }

Temperature Temperature::of(double tau) {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw Error("temperature must be positive, 0, or inf");
    return {Kind::finite, tau};
}

Temperature Temperature::parse(std::string_view text) {
    if (text == "inf" || text == "infinity") return infinity();
    const double v = parse_double(text, "temperature");
    if (v == 0.0) return zero();
    return of(v);
}

std::string Temperature::to_string() const {
    switch (kind) {
        case Kind::zero: return "0";
        case Kind::infinity: return "inf";
        case Kind::finite: return format_number(value);
    }
    return "?";
}

std::string selector_to_string(const Selector& selector) {
    if (const auto* seg = std::get_if<SegmentSelector>(&selector)) return "segment=" + seg->name;
    if (const auto* trunc = std::get_if<TruncationSelector>(&selector)) {
        return "truncate=" + format_number(trunc->fraction);
    }
    return {};
}

std::string MetricConfig::label() const {
    std::string out(metric_name(id));
    if (uses_temperature(id) && !(tau.kind == Temperature::Kind::finite && tau.value == 1.0)) {
        out += ":tau=" + tau.to_string();
    }
    const std::string sel = selector_to_string(selector);
    if (!sel.empty()) out += ":" + sel;
    return out;
}

MetricConfig parse_metric_config(std::string_view spec) {
    MetricConfig config;
    std::size_t pos = spec.find(':');
    config.id = parse_metric_id(spec.substr(0, pos));
    while (pos != std::string_view::npos) {
        const std::size_t next = spec.find(':', pos + 1);
        const std::string_view item = spec.substr(pos + 1, next == std::string_view::npos ? std::string_view::npos : next - pos - 1);
        const std::size_t eq = item.find('=');
        if (eq == std::string_view::npos) throw Error("metric option '" + std::string(item) + "' needs key=value");
        const std::string_view key = item.substr(0, eq);
        const std::string_view value = item.substr(eq + 1);
        if (key == "tau") {
            if (!uses_temperature(config.id)) {
                throw Error("metric " + std::string(metric_name(config.id)) + " takes no temperature");
            }
            config.tau = Temperature::parse(value);
        } else if (key == "segment") {
            if (value.empty()) throw Error("empty segment name");
            config.selector = SegmentSelector{std::string(value)};
        } else if (key == "truncate") {
            const double p = parse_double(value, "truncation fraction");
            if (!(p > 0.0 && p <= 1.0)) throw Error("truncation fraction must be in (0, 1]");
            config.selector = TruncationSelector{p};
        } else {
            throw Error("unknown metric option '" + std::string(key) + "'");
        }
        pos = next;
    }
    return config;
}

std::vector<MetricConfig> parse_metric_list(std::string_view list) {
    std::vector<MetricConfig> out;
    std::size_t start = 0;
    while (start <= list.size()) {
        const std::size_t comma = list.find(',', start);
        std::string_view item = list.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
        while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
        while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
        if (!item.empty()) out.push_back(parse_metric_config(item));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    if (out.empty()) throw Error("no metrics given");
    return out;
}

// ---------------------------------------------------------------------------
// selection

std::vector<std::size_t> TokenSelection::pair_rows() const {
    std::vector<std::size_t> rows;
    for (std::size_t t = 1; t < mask.size(); ++t) {
        if (mask[t - 1] && mask[t]) rows.push_back(t - 1);
    }
    return rows;
}

std::vector<std::size_t> TokenSelection::token_rows() const {
    std::vector<std::size_t> rows;
    for (std::size_t t = 0; t < mask.size(); ++t) {
        if (mask[t]) rows.push_back(t);
    }
    return rows;
}

TokenSelection select_indices(std::uint64_t tokens, std::span<const trajstore::SegmentSpan> segments,
                              const Selector& selector) {
    TokenSelection sel;
    const auto n = static_cast<std::size_t>(tokens);
    if (std::holds_alternative<std::monostate>(selector)) {
        sel.mask.assign(n, 1);
        sel.count = n;
        return sel;
    }
    sel.mask.assign(n, 0);
    if (const auto* trunc = std::get_if<TruncationSelector>(&selector)) {
        const double p = trunc->fraction;
        if (!(p > 0.0 && p <= 1.0)) throw Error("truncation fraction must be in (0, 1]");
        // small slack so that e.g. 0.29 * 100 keeps 29 tokens
        const auto keep = static_cast<std::size_t>(std::floor(p * static_cast<double>(n) + 1e-9));
        const std::size_t k = std::min(keep, n);
        std::fill(sel.mask.begin(), sel.mask.begin() + static_cast<std::ptrdiff_t>(k), 1);
        sel.count = k;
        return sel;
    }
    const auto& name = std::get<SegmentSelector>(selector).name;
    bool found = false;
    for (const auto& span : segments) {
        if (span.name != name) continue;
        found = true;
        if (span.start < 1 || span.end > tokens || span.start > span.end) throw Error("segment out of range");
        for (std::uint64_t t = span.start; t <= span.end; ++t) sel.mask[t - 1] = 1;
    }
    if (!found) throw Error("segment not found");
    sel.count = static_cast<std::size_t>(std::count(sel.mask.begin(), sel.mask.end(), std::uint8_t{1}));
    return sel;
}

Grid select_rows(const Grid& grid, std::span<const std::size_t> rows) {
    Grid out(rows.size(), grid.cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto src = grid.row(rows[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

delta::AlignedGrids restrict_aligned(const delta::AlignedGrids& aligned, const TokenSelection& selection) {
    if (selection.covers_all()) return aligned;
    const auto rows = selection.pair_rows();
    return {select_rows(aligned.at, rows), select_rows(aligned.al, rows)};
}

std::vector<double> select_values(std::span<const double> values, const TokenSelection& selection) {
    if (values.size() != selection.mask.size()) throw Error("token statistics length does not match T");
    std::vector<double> out;
    out.reserve(selection.count);
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (selection.mask[i]) out.push_back(values[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// StALT family

std::vector<double> layer_weights(std::span<const double> row, const Temperature& tau) {
    const std::size_t n = row.size();
    if (n == 0) throw Error("layer weights need at least one layer");
    std::vector<double> w(n, 0.0);
    switch (tau.kind) {
        case Temperature::Kind::infinity:
            std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(n));
            return w;
        case Temperature::Kind::zero: {
            // max_element returns the first maximum, i.e. the lowest layer on ties
            const auto best = std::max_element(row.begin(), row.end());
            w[static_cast<std::size_t>(best - row.begin())] = 1.0;
            return w;
        }
        case Temperature::Kind::finite:
            break;
    }
    const double peak = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (std::size_t l = 0; l < n; ++l) {
        w[l] = std::exp((row[l] - peak) / tau.value);
        total += w[l];
    }
    for (double& v : w) v /= total;
    return w;
}

namespace {

// Mean over rows of sum_l softmax(weight_row / tau)[l] * amplitude_row[l].
double weighted_amplitude(const Grid& amplitude, const Grid& saliency, const Temperature& tau) {
    if (amplitude.rows != saliency.rows || amplitude.cols != saliency.cols) throw Error("shape mismatch");
    if (amplitude.rows == 0 || amplitude.cols == 0) throw Error("trajectory too short");
    double total = 0.0;
    for (std::size_t t = 0; t < amplitude.rows; ++t) {
        const auto w = layer_weights(saliency.row(t), tau);
        const auto a = amplitude.row(t);
        double row = 0.0;
        for (std::size_t l = 0; l < a.size(); ++l) row += w[l] * a[l];
        total += row;
    }
    return total / static_cast<double>(amplitude.rows);
}

}  // namespace

double stalt(const delta::AlignedGrids& aligned, const Temperature& tau) {
    return weighted_amplitude(aligned.at, aligned.al, tau);
}

double stalt_reversed(const delta::AlignedGrids& aligned, const Temperature& tau) {
    return weighted_amplitude(aligned.al, aligned.at, tau);
}

double grid_mean(const Grid& grid) {
    if (grid.empty()) throw Error("empty grid");
    double total = 0.0;
    for (double v : grid.values) total += v;
    return total / static_cast<double>(grid.size());
}

// ---------------------------------------------------------------------------
// output-space baselines

double gen_tokens_score(std::uint64_t selected_tokens) { return -static_cast<double>(selected_tokens); }

double max_prob_score(std::span<const double> max_prob) {
    require_non_empty(max_prob.size());
    double total = 0.0;
    for (double p : max_prob) total += p;
    return total / static_cast<double>(max_prob.size());
}

double perplexity_score(std::span<const double> chosen_logprob) {
    require_non_empty(chosen_logprob.size());
    double nll = 0.0;
    for (double lp : chosen_logprob) nll -= lp;
    nll /= static_cast<double>(chosen_logprob.size());
    return -std::exp(std::min(nll, kMaxMeanNll));
}

double entropy_score(std::span<const double> entropy) {
    require_non_empty(entropy.size());
    double total = 0.0;
    for (double h : entropy) total += h;
    return -total / static_cast<double>(entropy.size());
}

// ---------------------------------------------------------------------------
// chain of embedding

namespace {

struct Transition {
    double magnitude = 0.0;
    double angle = 0.0;
};

Transition transition(std::span<const double> a, std::span<const double> b, bool& degenerate) {
    double diff = 0.0, dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = b[i] - a[i];
        diff += d * d;
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    Transition out{std::sqrt(diff), 0.0};
    if (na < kCoeEpsilon || nb < kCoeEpsilon) {
        degenerate = true;
    } else {
        out.angle = std::acos(std::clamp(dot / (na * nb), -1.0, 1.0));
    }
    return out;
}

std::vector<Transition> chain(const Grid& summary, bool& degenerate) {
    if (summary.rows < 2) throw Error("need at least embedding plus one layer");
    std::vector<Transition> steps;
    steps.reserve(summary.rows - 1);
    for (std::size_t l = 0; l + 1 < summary.rows; ++l) {
        steps.push_back(transition(summary.row(l), summary.row(l + 1), degenerate));
    }
    return steps;
}

}  // namespace

double coe_r(const Grid& summary, bool* degenerate) {
    bool flag = false;
    const auto steps = chain(summary, flag);
    const Transition span = transition(summary.row(0), summary.row(summary.rows - 1), flag);
    const double mag_den = std::max(span.magnitude, kCoeEpsilon);
    const double ang_den = std::max(span.angle, kCoeEpsilon);
    double total = 0.0;
    for (const auto& s : steps) total += s.magnitude / mag_den - s.angle / ang_den;
    if (degenerate) *degenerate = flag;
    return total / static_cast<double>(steps.size());
}

double coe_c(const Grid& summary, bool* degenerate) {
    bool flag = false;
    const auto steps = chain(summary, flag);
    double re = 0.0, im = 0.0;
    for (const auto& s : steps) {
        re += s.magnitude * std::cos(s.angle);
        im += s.magnitude * std::sin(s.angle);
    }
    if (degenerate) *degenerate = flag;
    return std::hypot(re, im) / static_cast<double>(steps.size());
}

std::optional<std::size_t> ScoreTable::metric_index(std::string_view label) const {
    for (std::size_t i = 0; i < metrics.size(); ++i) {
        if (metrics[i] == label) return i;
    }
    return std::nullopt;
}

}  // namespace stalt::metrics
