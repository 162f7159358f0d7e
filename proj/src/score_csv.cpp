#include "stalt/score_csv.hpp"

#include "stalt/csv.hpp"
#include "stalt/error.hpp"

#include <charconv>
#include <fstream>
#include <ostream>

namespace stalt::metrics {

namespace {

constexpr std::string_view kFixedColumns[] = {"record_id", "label", "length", "group"};

std::string join_errors(const std::vector<std::string>& errors) {
    std::string out;
    for (const auto& e : errors) {
        if (!out.empty()) out += "; ";
        out += e;
    }
    return out;
}

std::vector<std::string> split_errors(const std::string& text) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto end = text.find("; ", pos);
        if (end == std::string::npos) end = text.size();
        out.push_back(text.substr(pos, end - pos));
        pos = end + 2;
    }
    return out;
}

}  // namespace

void write_score_csv(const ScoreTable& table, std::ostream& out) {
    std::vector<std::string> header(std::begin(kFixedColumns), std::end(kFixedColumns));
    header.insert(header.end(), table.metrics.begin(), table.metrics.end());
    header.emplace_back("errors");
    csv::write_row(out, header);
    for (const auto& row : table.rows) {
        std::vector<std::string> fields;
        fields.reserve(header.size());
        fields.push_back(row.record_id);
        fields.push_back(row.label ? (*row.label ? "1" : "0") : "");
        fields.push_back(row.length ? std::to_string(*row.length) : "");
        fields.push_back(row.group.value_or(""));
        for (const auto& s : row.scores) fields.push_back(s ? csv::format_double(*s) : "");
        fields.push_back(join_errors(row.errors));
        csv::write_row(out, fields);
    }
}

void write_score_csv_file(const ScoreTable& table, const std::filesystem::path& path) {
    auto out = trajstore::open_output(path);
    write_score_csv(table, out);
    out.close();
    if (!out) throw Error("cannot write " + path.string());
}

ScoreTable read_score_csv(std::istream& in) {
    const csv::Table raw = csv::read(in);
    for (std::size_t i = 0; i < std::size(kFixedColumns); ++i) {
        if (raw.header.size() <= i || raw.header[i] != kFixedColumns[i]) {
            throw Error("score CSV must start with record_id,label,length,group");
        }
    }
    ScoreTable table;
    std::optional<std::size_t> errors_col;
    std::vector<std::size_t> metric_cols;
    for (std::size_t c = std::size(kFixedColumns); c < raw.header.size(); ++c) {
        if (raw.header[c] == "errors") {
            errors_col = c;
        } else {
            metric_cols.push_back(c);
            table.metrics.push_back(raw.header[c]);
        }
    }
    for (const auto& fields : raw.rows) {
        ScoreRow row;
        row.record_id = fields[0];
        if (fields[1] == "1" || fields[1] == "true") {
            row.label = true;
        } else if (fields[1] == "0" || fields[1] == "false") {
            row.label = false;
        } else if (!fields[1].empty()) {
            throw Error("bad label '" + fields[1] + "' for record " + row.record_id);
        }
        if (!fields[2].empty()) {
            std::uint64_t length = 0;
            auto res = std::from_chars(fields[2].data(), fields[2].data() + fields[2].size(), length);
            if (res.ec != std::errc() || res.ptr != fields[2].data() + fields[2].size()) {
                throw Error("bad length '" + fields[2] + "' for record " + row.record_id);
            }
            row.length = length;
        }
        if (!fields[3].empty()) row.group = fields[3];
        for (auto c : metric_cols) {
            if (fields[c].empty()) {
                row.scores.emplace_back();
            } else {
                row.scores.emplace_back(csv::parse_double(fields[c]));
            }
        }
        if (errors_col) row.errors = split_errors(fields[*errors_col]);
        table.rows.push_back(std::move(row));
    }
    return table;
}

ScoreTable read_score_csv_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return read_score_csv(in);
}

evalstats::LabeledScores labeled_scores(const ScoreTable& table, std::string_view metric, SelectionCounts* counts) {
    const auto col = table.metric_index(metric);
    if (!col) throw Error("no metric column " + std::string(metric));
    evalstats::LabeledScores data;
    SelectionCounts local;
    bool all_lengths = true;
    bool all_groups = true;
    std::vector<std::uint64_t> lengths;
    std::vector<std::string> groups;
    for (const auto& row : table.rows) {
        ++local.total;
        if (!row.label) {
            ++local.unlabeled;
            continue;
        }
        const auto& score = row.scores[*col];
        if (!score) {
            ++local.missing_score;
            continue;
        }
        ++local.used;
        data.scores.push_back(*score);
        data.labels.push_back(*row.label);
        all_lengths = all_lengths && row.length.has_value();
        all_groups = all_groups && row.group.has_value();
        lengths.push_back(row.length.value_or(0));
        groups.push_back(row.group.value_or(""));
    }
    if (all_lengths && !data.scores.empty()) data.lengths = std::move(lengths);
    if (all_groups && !data.scores.empty()) data.groups = std::move(groups);
    if (counts) *counts = local;
    return data;
}

}  // namespace stalt::metrics
