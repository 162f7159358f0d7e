#include "stalt/grader.hpp"

#include "stalt/csv.hpp"
#include "stalt/error.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <regex>

namespace stalt::grader {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

}  // namespace

std::string_view mode_name(Mode mode) {
    switch (mode) {
        case Mode::boxed: return "boxed";
        case Mode::choice: return "choice";
        case Mode::integer: return "integer";
    }
    return "?";
}

Mode parse_mode(std::string_view name) {
    if (name == "boxed") return Mode::boxed;
    if (name == "choice") return Mode::choice;
    if (name == "integer") return Mode::integer;
    throw Error("unknown grade mode " + std::string(name));
}

Extraction extract_boxed(std::string_view text) {
    constexpr std::string_view tag = "\\boxed{";
    const auto start = text.rfind(tag);
    if (start == std::string_view::npos) return {std::nullopt, "no \\boxed{} found"};
    const std::size_t open = start + tag.size();
    int depth = 1;
    for (std::size_t i = open; i < text.size(); ++i) {
        if (text[i] == '{') {
            ++depth;
        } else if (text[i] == '}') {
            if (--depth == 0) return {std::string(text.substr(open, i - open)), ""};
        }
    }
    return {std::nullopt, "unbalanced braces after last \\boxed{"};
}

std::optional<std::string> extract_choice(std::string_view text) {
    static const std::regex pattern(R"(the\s+answer\s+is\s*\(?\s*([A-J])\b)", std::regex::icase);
    std::optional<std::string> last;
    const std::string s(text);
    for (auto it = std::sregex_iterator(s.begin(), s.end(), pattern); it != std::sregex_iterator(); ++it) {
        std::string letter = (*it)[1].str();
        letter[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(letter[0])));
        last = letter;
    }
    return last;
}

std::optional<long long> parse_integer(std::string_view text) {
    std::string digits;
    for (char c : trim(text)) {
        if (c == ',' || std::isspace(static_cast<unsigned char>(c))) continue;
        digits += c;
    }
    std::string_view s = digits;
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    if (s.empty() || s.front() == '+') return std::nullopt;
    long long value = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), value);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
    return value;
}

std::optional<bool> grade(std::string_view text, std::string_view gold, Mode mode) {
    std::optional<std::string> answer;
    if (mode == Mode::choice) {
        answer = extract_choice(text);
    } else {
        answer = extract_boxed(text).answer;
    }
    if (!answer) return std::nullopt;
    if (mode == Mode::integer) {
        const auto got = parse_integer(*answer);
        if (!got) return std::nullopt;
        const auto want = parse_integer(gold);
        if (!want) throw Error("gold answer is not an integer: '" + std::string(gold) + "'");
        return *got == *want;
    }
    if (mode == Mode::choice) {
        std::string g(trim(gold));
        if (g.size() >= 3 && g.front() == '(' && g.back() == ')') g = g.substr(1, g.size() - 2);
        std::transform(g.begin(), g.end(), g.begin(), [](unsigned char c) { return std::toupper(c); });
        return *answer == g;
    }
    return trim(*answer) == trim(gold);
}

GoldMap read_gold_csv(const std::filesystem::path& path) {
    auto in = trajstore::open_input(path);
    GoldMap gold;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        auto fields = csv::split_line(line);
        if (fields.size() != 2) throw Error("gold CSV rows need two columns: " + line);
        if (first && trim(fields[0]) == "id") {
            first = false;
            continue;
        }
        first = false;
        const std::string id(trim(fields[0]));
        if (!gold.emplace(id, fields[1]).second) throw Error("duplicate id in gold CSV: " + id);
    }
    return gold;
}

trajstore::Manifest grade_manifest(const trajstore::Manifest& manifest, const GoldMap* gold, Mode mode,
                                   GradeSummary* summary) {
    trajstore::Manifest out = manifest;
    GradeSummary local;
    GradeSummary& s = summary ? *summary : local;
    s = {};
    for (auto& r : out.records) {
        std::string expected;
        if (gold) {
            auto it = gold->find(r.id);
            if (it == gold->end()) throw Error("missing gold for record " + r.id);
            expected = it->second;
        } else if (r.gold) {
            expected = *r.gold;
        } else {
            throw Error("missing gold for record " + r.id);
        }
        r.label = grade(r.text, expected, mode);
        ++s.total;
        if (r.label) {
            ++s.labeled;
            if (*r.label) ++s.correct;
        } else {
            ++s.unlabeled;
            std::string why = "no answer extracted";
            if (mode != Mode::choice) {
                auto ex = extract_boxed(r.text);
                if (!ex.diagnostic.empty()) why = ex.diagnostic;
                else if (mode == Mode::integer) why = "boxed answer is not an integer";
            }
            s.diagnostics.push_back(r.id + ": " + why);
        }
    }
    return out;
}

}  // namespace stalt::grader
