#include "stalt/trajstore.hpp"

#include "stalt/error.hpp"

#include <set>
#include <sstream>

namespace stalt::trajstore {

using nlohmann::json;

namespace {

const std::set<std::string, std::less<>> kRecordFields = {
    "id", "model", "dataset", "group", "label", "text", "num_tokens",
    "token_stats", "segments", "tensor_refs", "gold",
};

std::string context(std::size_t index, const std::string& id) {
    return id.empty() ? "record " + std::to_string(index) : "record '" + id + "'";
}

template <typename T>
T get_as(const json& node, std::string_view field, const std::string& where) {
    try {
        return node.get<T>();
    } catch (const json::exception&) {
        throw Error("malformed manifest: field " + std::string(field) + " has wrong type in " + where);
    }
}

std::vector<double> number_array(const json& node, std::string_view field, const std::string& where) {
    if (!node.is_array()) throw Error("malformed manifest: token_stats." + std::string(field) + " must be an array in " + where);
    std::vector<double> out;
    out.reserve(node.size());
    for (const auto& v : node) {
        if (!v.is_number()) throw Error("malformed manifest: non-numeric token_stats." + std::string(field) + " in " + where);
        out.push_back(v.get<double>());
    }
    return out;
}

GenerationRecord parse_record(const json& node, std::size_t index, const Manifest& manifest, const fs::path& base_dir) {
    if (!node.is_object()) throw Error("malformed manifest: record " + std::to_string(index) + " is not an object");
    GenerationRecord r;
    r.base_dir = base_dir;
    if (!node.contains("id")) throw Error("missing field id (" + context(index, "") + ")");
    r.id = get_as<std::string>(node["id"], "id", context(index, ""));
    const std::string where = context(index, r.id);
    if (!node.contains("tensor_refs")) throw Error("missing field tensor_refs (" + where + ")");

    const json& refs = node["tensor_refs"];
    if (!refs.is_object()) throw Error("malformed manifest: tensor_refs must be an object in " + where);
    auto ref = [&](const char* name) -> std::optional<std::string> {
        if (!refs.contains(name) || refs[name].is_null()) return std::nullopt;
        return get_as<std::string>(refs[name], name, where);
    };
    r.tensor_refs.trajectory = ref("trajectory");
    r.tensor_refs.delta_grid = ref("delta_grid");
    r.tensor_refs.layer_summary = ref("layer_summary");
    r.tensor_refs.token_stats = ref("token_stats");

    r.model = node.contains("model") ? get_as<std::string>(node["model"], "model", where) : std::string{};
    r.dataset = node.contains("dataset") ? get_as<std::string>(node["dataset"], "dataset", where) : manifest.dataset;
    r.text = node.contains("text") ? get_as<std::string>(node["text"], "text", where) : std::string{};
    if (node.contains("group") && !node["group"].is_null()) r.group = get_as<std::string>(node["group"], "group", where);
    if (node.contains("label") && !node["label"].is_null()) r.label = get_as<bool>(node["label"], "label", where);
    if (node.contains("gold") && !node["gold"].is_null()) r.gold = get_as<std::string>(node["gold"], "gold", where);
    if (node.contains("num_tokens") && !node["num_tokens"].is_null()) {
        r.num_tokens = get_as<std::uint64_t>(node["num_tokens"], "num_tokens", where);
    }
    if (node.contains("token_stats") && !node["token_stats"].is_null()) {
        const json& ts = node["token_stats"];
        if (!ts.is_object()) throw Error("malformed manifest: token_stats must be an object in " + where);
        TokenStats stats;
        for (const char* col : {"chosen_logprob", "max_prob", "entropy"}) {
            if (!ts.contains(col)) throw Error("missing field token_stats." + std::string(col) + " (" + where + ")");
        }
        stats.chosen_logprob = number_array(ts["chosen_logprob"], "chosen_logprob", where);
        stats.max_prob = number_array(ts["max_prob"], "max_prob", where);
        stats.entropy = number_array(ts["entropy"], "entropy", where);
        r.token_stats = std::move(stats);
    }
    if (node.contains("segments") && !node["segments"].is_null()) {
        const json& segs = node["segments"];
        if (!segs.is_array()) throw Error("malformed manifest: segments must be an array in " + where);
        for (const auto& s : segs) {
            if (!s.is_object() || !s.contains("name") || !s.contains("start") || !s.contains("end")) {
                throw Error("malformed manifest: segment needs name, start, end in " + where);
            }
            SegmentSpan span;
            span.name = get_as<std::string>(s["name"], "segments.name", where);
            span.start = get_as<std::uint64_t>(s["start"], "segments.start", where);
            span.end = get_as<std::uint64_t>(s["end"], "segments.end", where);
            r.segments.push_back(std::move(span));
        }
    }
    for (const auto& [key, value] : node.items()) {
        if (!kRecordFields.contains(key)) r.extra[key] = value;
    }
    return r;
}

json record_to_json(const GenerationRecord& r, const fs::path& target_dir) {
    json node = json::object();
    node["id"] = r.id;
    if (!r.model.empty()) node["model"] = r.model;
    if (!r.dataset.empty()) node["dataset"] = r.dataset;
    if (r.group) node["group"] = *r.group;
    node["label"] = r.label ? json(*r.label) : json(nullptr);
    node["text"] = r.text;
    if (r.num_tokens) node["num_tokens"] = *r.num_tokens;
    if (r.gold) node["gold"] = *r.gold;
    if (r.token_stats) {
        node["token_stats"] = {
            {"chosen_logprob", r.token_stats->chosen_logprob},
            {"max_prob", r.token_stats->max_prob},
            {"entropy", r.token_stats->entropy},
        };
    }
    json segs = json::array();
    for (const auto& s : r.segments) segs.push_back({{"name", s.name}, {"start", s.start}, {"end", s.end}});
    node["segments"] = std::move(segs);

    json refs = json::object();
    auto relink = [&](const std::optional<std::string>& ref) -> std::string {
        if (target_dir.empty()) return *ref;
        const fs::path abs = fs::absolute(r.resolve(*ref)).lexically_normal();
        return abs.lexically_relative(fs::absolute(target_dir).lexically_normal()).generic_string();
    };
    if (r.tensor_refs.trajectory) refs["trajectory"] = relink(r.tensor_refs.trajectory);
    if (r.tensor_refs.delta_grid) refs["delta_grid"] = relink(r.tensor_refs.delta_grid);
    if (r.tensor_refs.layer_summary) refs["layer_summary"] = relink(r.tensor_refs.layer_summary);
    if (r.tensor_refs.token_stats) refs["token_stats"] = relink(r.tensor_refs.token_stats);
    node["tensor_refs"] = std::move(refs);
    for (const auto& [key, value] : r.extra.items()) node[key] = value;
    return node;
}

std::string dump_with_target(const Manifest& manifest, const fs::path& target_dir) {
    json doc = json::object();
    doc["dataset"] = manifest.dataset;
    json records = json::array();
    for (const auto& r : manifest.records) records.push_back(record_to_json(r, target_dir));
    doc["records"] = std::move(records);
    for (const auto& [key, value] : manifest.extra.items()) doc[key] = value;
    return doc.dump(1) + "\n";
}

}  // namespace

bool is_known_segment_name(std::string_view name) {
    return name == "think" || name == "answer" || name == "analysis" || name == "final" || name == "other";
}

Manifest parse_manifest(std::string_view document, const fs::path& base_dir) {
    json doc;
    try {
        doc = json::parse(document);
    } catch (const json::parse_error& e) {
        throw Error(std::string("malformed manifest: ") + e.what());
    }
    if (!doc.is_object()) throw Error("malformed manifest: top level must be an object");
    if (!doc.contains("records")) throw Error("missing field records");
    if (!doc["records"].is_array()) throw Error("malformed manifest: records must be an array");

    Manifest manifest;
    if (doc.contains("dataset") && !doc["dataset"].is_null()) {
        manifest.dataset = get_as<std::string>(doc["dataset"], "dataset", "manifest");
    }
    for (const auto& [key, value] : doc.items()) {
        if (key != "dataset" && key != "records") manifest.extra[key] = value;
    }
    std::set<std::string, std::less<>> seen;
    const json& records = doc["records"];
    manifest.records.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        GenerationRecord r = parse_record(records[i], i, manifest, base_dir);
        if (!seen.insert(r.id).second) throw Error("duplicate id: " + r.id);
        manifest.records.push_back(std::move(r));
    }
    return manifest;
}

Manifest load_manifest(const fs::path& path) {
    auto in = open_input(path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_manifest(buf.str(), path.parent_path());
}

std::string dump_manifest(const Manifest& manifest) { return dump_with_target(manifest, {}); }

void save_manifest(const Manifest& manifest, const fs::path& path) {
    const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
    auto out = open_output(path);
    out << dump_with_target(manifest, dir);
    if (!out) throw Error("cannot write " + path.string());
}

std::optional<TokenStats> load_token_stats(const GenerationRecord& record) {
    if (record.token_stats) return record.token_stats;
    if (record.tensor_refs.token_stats) {
        auto in = open_input(record.resolve(*record.tensor_refs.token_stats));
        return read_token_stats(in);
    }
    return std::nullopt;
}

}  // namespace stalt::trajstore
