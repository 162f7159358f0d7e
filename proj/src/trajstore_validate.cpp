#include "stalt/trajstore.hpp"

#include "stalt/error.hpp"

#include <algorithm>
#include <cmath>

namespace stalt::trajstore {

namespace {

class RecordChecker {
public:
    RecordChecker(const GenerationRecord& record, const ValidationOptions& options, ValidationReport& report)
        : r_(record), options_(options), report_(report) {}

    void run() {
        if (!r_.tensor_refs.has_tensor()) fail("tensor refs", "no trajectory, delta grid, or layer summary reference");
        if (r_.num_tokens) note_tokens("num_tokens", *r_.num_tokens);
        check_inline_stats();
        check_sidecar_stats();
        check_trajectory();
        check_delta_grid();
        check_layer_summary();
        check_segments();
    }

private:
    void fail(std::string check, std::string message) {
        report_.errors.push_back({r_.id, std::move(check), std::move(message)});
    }

    void note_tokens(const std::string& source, std::uint64_t t) {
        if (t < 1) {
            fail("dims", source + " declares T = 0");
            return;
        }
        if (!tokens_) {
            tokens_ = t;
            tokens_source_ = source;
        } else if (*tokens_ != t) {
            fail("T mismatch", source + " has T = " + std::to_string(t) + " but " + tokens_source_ + " has T = " +
                                   std::to_string(*tokens_));
        }
    }

    void note_layers(const std::string& source, std::uint64_t layers) {
        if (!layers_) {
            layers_ = layers;
            layers_source_ = source;
        } else if (*layers_ != layers) {
            fail("layer mismatch", source + " has L+1 = " + std::to_string(layers) + " but " + layers_source_ +
                                       " has L+1 = " + std::to_string(*layers_));
        }
    }

    void note_width(const std::string& source, std::uint64_t width) {
        if (!width_) {
            width_ = width;
        } else if (*width_ != width) {
            fail("width mismatch", source + " has D = " + std::to_string(width) + ", expected " + std::to_string(*width_));
        }
    }

    void check_stats_values(const TokenStats& stats, const std::string& source) {
        if (!stats.consistent()) {
            fail("token stats", source + " columns differ in length");
            return;
        }
        note_tokens(source, stats.size());
        for (std::size_t i = 0; i < stats.size(); ++i) {
            const double lp = stats.chosen_logprob[i];
            const double mp = stats.max_prob[i];
            const double h = stats.entropy[i];
            const std::string at = source + " token " + std::to_string(i + 1);
            if (!std::isfinite(lp) || !std::isfinite(mp) || !std::isfinite(h)) {
                fail("token stats", at + ": non-finite value");
                return;
            }
            if (lp > 0.0) {
                fail("token stats", at + ": chosen_logprob > 0");
                return;
            }
            if (!(mp > 0.0 && mp <= 1.0)) {
                fail("token stats", at + ": max_prob outside (0, 1]");
                return;
            }
            if (h < 0.0) {
                fail("token stats", at + ": entropy < 0");
                return;
            }
        }
    }

    void check_inline_stats() {
        if (!r_.token_stats) return;
        check_stats_values(*r_.token_stats, "inline token_stats");
        if (r_.token_stats->size() > kInlineTokenStatsLimit) {
            fail("inline token stats", "inline token statistics with T = " + std::to_string(r_.token_stats->size()) +
                                           " > " + std::to_string(kInlineTokenStatsLimit) + "; use a TOKS sidecar");
        }
    }

    void check_sidecar_stats() {
        if (!r_.tensor_refs.token_stats) return;
        try {
            auto in = open_input(r_.resolve(*r_.tensor_refs.token_stats));
            check_stats_values(read_token_stats(in), "TOKS");
        } catch (const Error& e) {
            fail("io", "token stats: " + std::string(e.what()));
        }
    }

    void check_block(std::span<const double> block, std::uint64_t t) {
        for (double v : block) {
            if (!std::isfinite(v)) {
                fail("non-finite", "trajectory step " + std::to_string(t + 1) + " contains a non-finite value");
                return;
            }
        }
    }

    void check_trajectory() {
        if (!r_.tensor_refs.trajectory) return;
        const fs::path path = r_.resolve(*r_.tensor_refs.trajectory);
        try {
            auto in = open_input(path);
            TrajectoryReader reader(in);
            const TrajectoryShape shape = reader.shape();
            note_tokens("STRJ", shape.tokens);
            note_layers("STRJ", shape.layers);
            note_width("STRJ", shape.width);
            const std::uint64_t expected = kStrjHeaderBytes + shape.payload_bytes();
            const std::uint64_t actual = fs::file_size(path);
            if (actual != expected) {
                fail("payload size", "STRJ is " + std::to_string(actual) + " bytes, dims imply " + std::to_string(expected));
                return;
            }
            if (options_.deep) {
                Grid sums(shape.layers, shape.width);
                std::uint64_t t = 0;
                for (auto block = reader.next(); !block.empty(); block = reader.next(), ++t) {
                    check_block(block, t);
                    for (std::size_t i = 0; i < block.size(); ++i) sums.values[i] += block[i];
                }
                for (double& v : sums.values) v /= static_cast<double>(shape.tokens);
                summary_reference_ = std::move(sums);
            } else {
                // sampled finiteness: first, middle, last step
                std::vector<std::uint64_t> steps = {0, shape.tokens / 2, shape.tokens - 1};
                steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
                for (std::uint64_t t : steps) {
                    reader.seek_step(t);
                    check_block(reader.next(), t);
                }
            }
        } catch (const Error& e) {
            fail("io", "trajectory: " + std::string(e.what()));
        } catch (const fs::filesystem_error& e) {
            fail("io", "trajectory: " + std::string(e.what()));
        }
    }

    void check_delta_grid() {
        if (!r_.tensor_refs.delta_grid) return;
        try {
            const DeltaGrid grid = read_delta_grid_file(r_.resolve(*r_.tensor_refs.delta_grid));
            note_tokens("DGRD", grid.tokens);
            note_layers("DGRD", grid.layers);
        } catch (const Error& e) {
            const std::string what = e.what();
            fail(what == "corrupt grid" ? "corrupt grid" : "io", "delta grid: " + what);
        }
    }

    void check_layer_summary() {
        if (!r_.tensor_refs.layer_summary) return;
        try {
            auto in = open_input(r_.resolve(*r_.tensor_refs.layer_summary));
            const LayerSummary summary = read_layer_summary(in);
            note_layers("LSUM", summary.rows.rows);
            note_width("LSUM", summary.rows.cols);
            for (double v : summary.rows.values) {
                if (!std::isfinite(v)) {
                    fail("non-finite", "layer summary contains a non-finite value");
                    return;
                }
            }
            if (summary_reference_ && summary_reference_->rows == summary.rows.rows &&
                summary_reference_->cols == summary.rows.cols) {
                for (std::size_t i = 0; i < summary.rows.size(); ++i) {
                    const double ref = summary_reference_->values[i];
                    if (std::abs(summary.rows.values[i] - ref) > 1e-6 * std::max(1.0, std::abs(ref))) {
                        fail("summary mismatch", "layer summary differs from the trajectory mean at row " +
                                                     std::to_string(i / summary.rows.cols));
                        return;
                    }
                }
            }
        } catch (const Error& e) {
            fail("io", "layer summary: " + std::string(e.what()));
        }
    }

    void check_segments() {
        std::vector<SegmentSpan> sorted;
        for (const auto& s : r_.segments) {
            if (!is_known_segment_name(s.name)) fail("segment name", "unknown segment name '" + s.name + "'");
            const bool bounded = s.start >= 1 && s.start <= s.end && (!tokens_ || s.end <= *tokens_);
            if (!bounded) {
                fail("segment out of range", s.name + " [" + std::to_string(s.start) + ", " + std::to_string(s.end) +
                                                 "] with T = " + (tokens_ ? std::to_string(*tokens_) : "?"));
                continue;
            }
            sorted.push_back(s);
        }
        std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.start < b.start; });
        for (std::size_t i = 1; i < sorted.size(); ++i) {
            if (sorted[i].start <= sorted[i - 1].end) {
                fail("segment overlap", sorted[i - 1].name + " and " + sorted[i].name + " overlap");
            }
        }
    }

    const GenerationRecord& r_;
    const ValidationOptions& options_;
    ValidationReport& report_;
    std::optional<std::uint64_t> tokens_;
    std::string tokens_source_;
    std::optional<std::uint64_t> layers_;
    std::string layers_source_;
    std::optional<std::uint64_t> width_;
    std::optional<Grid> summary_reference_;
};

}  // namespace

bool ValidationReport::has(std::string_view record_id, std::string_view check) const {
    return std::any_of(errors.begin(), errors.end(),
                       [&](const ValidationEntry& e) { return e.record_id == record_id && e.check == check; });
}

ValidationReport validate_dataset(std::span<const GenerationRecord> records, const ValidationOptions& options) {
    ValidationReport report;
    for (const auto& record : records) {
        RecordChecker(record, options, report).run();
        ++report.records_checked;
    }
    return report;
}

}  // namespace stalt::trajstore
