#include "stalt/error.hpp"
#include "stalt/metrics.hpp"
#include "stalt/parallel.hpp"

#include <algorithm>
#include <functional>

namespace stalt::metrics {

namespace {

using trajstore::GenerationRecord;

// Input products of one record, loaded on first use. A failed load is
// remembered so every metric that needs the product reports the same reason.
template <typename T>
class Lazy {
public:
    explicit Lazy(std::function<T()> load) : load_(std::move(load)) {}

    const T& get() {
        if (!done_) {
            done_ = true;
            try {
                value_ = load_();
            } catch (const Error& e) {
                error_ = e.what();
            } catch (const std::filesystem::filesystem_error& e) {
                error_ = e.what();
            }
        }
        if (!value_) throw Error(error_);
        return *value_;
    }

private:
    std::function<T()> load_;
    bool done_ = false;
    std::optional<T> value_;
    std::string error_;
};

struct Needs {
    bool grids = false;
    bool cosine = false;
    bool stats = false;
    bool summary = false;
};

Needs needs_of(std::span<const MetricConfig> configs) {
    Needs n;
    for (const auto& c : configs) {
        switch (c.id) {
            case MetricId::stalt:
            case MetricId::stalt_reversed:
            case MetricId::mean_time_l2:
            case MetricId::mean_layer_l2: n.grids = true; break;
            case MetricId::mean_time_cos:
            case MetricId::mean_layer_cos: n.cosine = true; break;
            case MetricId::max_prob:
            case MetricId::perplexity:
            case MetricId::entropy: n.stats = true; break;
            case MetricId::coe_r:
            case MetricId::coe_c: n.summary = true; break;
            case MetricId::gen_tokens: break;
        }
    }
    return n;
}

struct Grids {
    Grid dt;
    Grid dl;
    std::optional<Grid> ct;
    std::optional<Grid> cl;
};

class RecordScorer {
public:
    RecordScorer(const GenerationRecord& record, const Needs& needs)
        : r_(record),
          needs_(needs),
          stats_([this] { return load_stats(); }),
          trajectory_products_([this] { return load_trajectory_products(); }),
          grids_([this] { return load_grids(); }),
          aligned_([this] { return delta::align(grids_.get().dt, grids_.get().dl); }),
          summary_([this] { return load_summary(); }) {}

    ScoreRow score(std::span<const MetricConfig> configs) {
        ScoreRow row;
        row.record_id = r_.id;
        row.label = r_.label;
        row.group = r_.group;
        row.length = token_count();
        for (const auto& config : configs) {
            try {
                row.scores.push_back(score_one(config));
            } catch (const Error& e) {
                row.scores.push_back(std::nullopt);
                row.errors.push_back(config.label() + ": " + e.what());
            }
        }
        return row;
    }

private:
    std::optional<std::uint64_t> token_count() {
        if (tokens_checked_) return tokens_;
        tokens_checked_ = true;
        if (r_.num_tokens) {
            tokens_ = r_.num_tokens;
        } else if (r_.token_stats) {
            tokens_ = r_.token_stats->size();
        } else {
            try {
                if (r_.tensor_refs.token_stats) {
                    auto in = trajstore::open_input(r_.resolve(*r_.tensor_refs.token_stats));
                    tokens_ = trajstore::read_token_stats_length(in);
                } else if (r_.tensor_refs.delta_grid) {
                    auto in = trajstore::open_input(r_.resolve(*r_.tensor_refs.delta_grid));
                    tokens_ = trajstore::read_delta_grid_header(in).tokens;
                } else if (r_.tensor_refs.trajectory) {
                    auto in = trajstore::open_input(r_.resolve(*r_.tensor_refs.trajectory));
                    tokens_ = trajstore::read_trajectory_header(in).tokens;
                }
            } catch (const Error&) {
                tokens_.reset();
            }
        }
        return tokens_;
    }

    trajstore::TokenStats load_stats() {
        auto stats = trajstore::load_token_stats(r_);
        if (!stats) throw Error("missing input: token stats");
        return *stats;
    }

    // One fused pass over the STRJ for whatever grid and summary products
    // are needed but not available precomputed.
    delta::DeltaResult load_trajectory_products() {
        if (!r_.tensor_refs.trajectory) throw Error("no trajectory");
        delta::Products p{.temporal = false, .layer = false};
        const bool have_grid = r_.tensor_refs.delta_grid.has_value();
        if ((needs_.grids || needs_.cosine) && !have_grid) p.temporal = p.layer = true;
        if (needs_.cosine) p.cosine = true;
        if (needs_.summary && !r_.tensor_refs.layer_summary) p.summary = true;
        auto in = trajstore::open_input(r_.resolve(*r_.tensor_refs.trajectory));
        trajstore::TrajectoryReader reader(in);
        return delta::compute(reader, p);
    }

    Grids load_grids() {
        if (r_.tensor_refs.delta_grid) {
            auto g = trajstore::read_delta_grid_file(r_.resolve(*r_.tensor_refs.delta_grid));
            return {std::move(g.dt), std::move(g.dl), std::move(g.ct), std::move(g.cl)};
        }
        if (!r_.tensor_refs.trajectory) throw Error("missing input: delta grids");
        const auto& p = trajectory_products_.get();
        return {*p.dt, *p.dl, p.ct, p.cl};
    }

    const Grid& cosine_grid(bool temporal) {
        const Grids& g = grids_.get();
        const auto& stored = temporal ? g.ct : g.cl;
        if (stored) return *stored;
        if (!r_.tensor_refs.trajectory) throw Error("missing input: cosine grids");
        const auto& p = trajectory_products_.get();
        return temporal ? *p.ct : *p.cl;
    }

    Grid load_summary() {
        if (r_.tensor_refs.layer_summary) {
            auto in = trajstore::open_input(r_.resolve(*r_.tensor_refs.layer_summary));
            return trajstore::read_layer_summary(in).rows;
        }
        if (!r_.tensor_refs.trajectory) throw Error("missing input: layer summary");
        return *trajectory_products_.get().summary;
    }

    Grid masked_summary(const TokenSelection& sel) {
        if (!r_.tensor_refs.trajectory) throw Error("missing input: trajectory");
        auto in = trajstore::open_input(r_.resolve(*r_.tensor_refs.trajectory));
        trajstore::TrajectoryReader reader(in);
        return delta::layer_summary(reader, sel.mask);
    }

    static bool is_grid_metric(MetricId id) {
        return id == MetricId::stalt || id == MetricId::stalt_reversed || id == MetricId::mean_time_l2 ||
               id == MetricId::mean_layer_l2 || id == MetricId::mean_time_cos || id == MetricId::mean_layer_cos;
    }

    double score_one(const MetricConfig& config) {
        const auto tokens = token_count();
        if (!tokens) throw Error("missing input: token count");
        const TokenSelection sel = select_indices(*tokens, r_.segments, config.selector);
        const bool selected = !std::holds_alternative<std::monostate>(config.selector);
        if (is_grid_metric(config.id) && selected && sel.count < 2) throw Error("selection too short");
        auto too_short = [&] { return Error(selected ? "selection too short" : "trajectory too short"); };

        switch (config.id) {
            case MetricId::stalt:
            case MetricId::stalt_reversed: {
                const auto aligned = restrict_aligned(aligned_.get(), sel);
                if (aligned.at.rows == 0) throw too_short();
                return config.id == MetricId::stalt ? stalt(aligned, config.tau) : stalt_reversed(aligned, config.tau);
            }
            case MetricId::mean_time_l2:
            case MetricId::mean_time_cos: {
                const Grid& g = config.id == MetricId::mean_time_l2 ? grids_.get().dt : cosine_grid(true);
                const Grid sub = sel.covers_all() ? g : select_rows(g, sel.pair_rows());
                if (sub.empty()) throw too_short();
                return grid_mean(sub);
            }
            case MetricId::mean_layer_l2:
            case MetricId::mean_layer_cos: {
                const Grid& g = config.id == MetricId::mean_layer_l2 ? grids_.get().dl : cosine_grid(false);
                const Grid sub = sel.covers_all() ? g : select_rows(g, sel.token_rows());
                if (sub.empty()) throw too_short();
                return grid_mean(sub);
            }
            case MetricId::gen_tokens:
                return gen_tokens_score(sel.count);
            case MetricId::max_prob:
                return max_prob_score(select_values(stats_.get().max_prob, sel));
            case MetricId::perplexity:
                return perplexity_score(select_values(stats_.get().chosen_logprob, sel));
            case MetricId::entropy:
                return entropy_score(select_values(stats_.get().entropy, sel));
            case MetricId::coe_r:
            case MetricId::coe_c: {
                if (sel.count == 0) throw Error("empty selection");
                const Grid summary = sel.covers_all() ? summary_.get() : masked_summary(sel);
                return config.id == MetricId::coe_r ? coe_r(summary) : coe_c(summary);
            }
        }
        throw Error("unhandled metric");
    }

    const GenerationRecord& r_;
    Needs needs_;
    bool tokens_checked_ = false;
    std::optional<std::uint64_t> tokens_;
    Lazy<trajstore::TokenStats> stats_;
    Lazy<delta::DeltaResult> trajectory_products_;
    Lazy<Grids> grids_;
    Lazy<delta::AlignedGrids> aligned_;
    Lazy<Grid> summary_;
};

}  // namespace

ScoreTable score_dataset(std::span<const trajstore::GenerationRecord> records, std::span<const MetricConfig> configs,
                         const ScoreOptions& options) {
    ScoreTable table;
    for (const auto& c : configs) {
        const std::string label = c.label();
        if (table.metric_index(label)) throw Error("duplicate metric column " + label);
        table.metrics.push_back(label);
    }
    const Needs needs = needs_of(configs);
    table.rows.resize(records.size());
    parallel_for(records.size(), options.workers, [&](std::size_t i) {
        RecordScorer scorer(records[i], needs);
        table.rows[i] = scorer.score(configs);
    });
    return table;
}

}  // namespace stalt::metrics
