#pragma once

#include "stalt/trajstore.hpp"

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

// Final-answer extraction and correctness labels.
namespace stalt::grader {

enum class Mode { boxed, choice, integer };

std::string_view mode_name(Mode mode);
Mode parse_mode(std::string_view name);

struct Extraction {
    std::optional<std::string> answer;
    std::string diagnostic;  // set when extraction failed for a reason worth reporting
};

// Content of the last \boxed{...}, matched with balanced braces.
Extraction extract_boxed(std::string_view text);
// Letter from the last case-insensitive "the answer is (X)", X in A..J.
std::optional<std::string> extract_choice(std::string_view text);

// "  +1,024 " -> 1024. Empty when the text is not an integer.
std::optional<long long> parse_integer(std::string_view text);

// Label for one text against its gold answer. Extraction failure leaves the
// record unlabeled rather than incorrect.
std::optional<bool> grade(std::string_view text, std::string_view gold, Mode mode);

using GoldMap = std::map<std::string, std::string, std::less<>>;

// Two-column CSV: id, answer. A header row naming "id" is recognised and skipped.
GoldMap read_gold_csv(const std::filesystem::path& path);

struct GradeSummary {
    std::size_t total = 0;
    std::size_t labeled = 0;
    std::size_t correct = 0;
    std::size_t unlabeled = 0;
    std::vector<std::string> diagnostics;  // "<id>: <reason>"
};

// Grades every record and returns a copy of the manifest with labels set.
// Gold comes from `gold` when given, otherwise from each record's gold field.
trajstore::Manifest grade_manifest(const trajstore::Manifest& manifest, const GoldMap* gold, Mode mode,
                                   GradeSummary* summary = nullptr);

}  // namespace stalt::grader
