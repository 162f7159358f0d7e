#pragma once

#include "stalt/evalstats.hpp"
#include "stalt/metrics.hpp"

#include <iosfwd>
#include <string_view>

// Score tables on disk: "record_id,label,length,group,<metric...>,errors".
// Labels are 1/0 or empty when unlabeled; a failed metric leaves its cell
// empty and its reason in the errors column.
namespace stalt::metrics {

void write_score_csv(const ScoreTable& table, std::ostream& out);
void write_score_csv_file(const ScoreTable& table, const std::filesystem::path& path);

ScoreTable read_score_csv(std::istream& in);
ScoreTable read_score_csv_file(const std::filesystem::path& path);

struct SelectionCounts {
    std::size_t total = 0;
    std::size_t unlabeled = 0;
    std::size_t missing_score = 0;
    std::size_t used = 0;
};

// Labeled rows with a value for `metric`, in table order. Lengths and groups
// are carried along only when every used row has them.
evalstats::LabeledScores labeled_scores(const ScoreTable& table, std::string_view metric,
                                        SelectionCounts* counts = nullptr);

}  // namespace stalt::metrics
