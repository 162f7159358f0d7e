#pragma once

#include "stalt/grid.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

// On-disk data model for generation traces: STRJ hidden-state trajectories,
// DGRD delta grids, TOKS token statistics, LSUM layer summaries, and the JSON
// manifest that ties them to records. All formats are little-endian and
// versioned; every reader upconverts payloads to double.
namespace stalt::trajstore {

namespace fs = std::filesystem;

enum class Dtype : std::uint8_t { f32 = 0, f16 = 1, bf16 = 2 };

std::size_t dtype_size(Dtype dtype);
std::string_view dtype_name(Dtype dtype);
Dtype parse_dtype(std::string_view name);

constexpr std::uint32_t kFormatVersion = 1;
constexpr std::size_t kStrjHeaderBytes = 36;
constexpr std::size_t kDgrdHeaderBytes = 32;
constexpr std::size_t kToksHeaderBytes = 16;
constexpr std::size_t kLsumHeaderBytes = 24;

// Manifests may carry token statistics inline only up to this length.
constexpr std::size_t kInlineTokenStatsLimit = 512;

struct TrajectoryShape {
    std::uint64_t tokens = 0;  // T, generated tokens only
    std::uint64_t layers = 0;  // L+1, embedding layer included
    std::uint64_t width = 0;   // D
    Dtype dtype = Dtype::f32;

    std::size_t step_values() const { return static_cast<std::size_t>(layers * width); }
    std::uint64_t step_bytes() const { return layers * width * dtype_size(dtype); }
    std::uint64_t payload_bytes() const { return tokens * step_bytes(); }

    friend bool operator==(const TrajectoryShape&, const TrajectoryShape&) = default;
};

// Throws stalt::Error when the shape cannot describe a valid trajectory.
void check_shape(const TrajectoryShape& shape);

// Whole trajectory held in memory, values indexed [t][l][d] with t and l zero-based.
struct HiddenTrajectory {
    TrajectoryShape shape;
    std::vector<double> values;

    std::span<const double> step(std::size_t t) const {
        return {values.data() + t * shape.step_values(), shape.step_values()};
    }
    std::span<const double> state(std::size_t t, std::size_t l) const {
        return {values.data() + (t * shape.layers + l) * shape.width, static_cast<std::size_t>(shape.width)};
    }
};

// Writes the STRJ header, then accepts one (L+1)xD step block at a time.
class TrajectoryWriter {
public:
    TrajectoryWriter(std::ostream& sink, const TrajectoryShape& shape);

    void append_step(std::span<const double> block);
    // Verifies that exactly T steps were written; returns total bytes.
    std::uint64_t finish();

private:
    std::ostream& sink_;
    TrajectoryShape shape_;
    std::uint64_t steps_written_ = 0;
    std::vector<unsigned char> scratch_;
};

std::uint64_t write_trajectory(const HiddenTrajectory& trajectory, std::ostream& sink);
void write_trajectory_file(const HiddenTrajectory& trajectory, const fs::path& path);

// Per-step streaming reader. Memory use is one step block regardless of T.
class TrajectoryReader {
public:
    explicit TrajectoryReader(std::istream& source);

    const TrajectoryShape& shape() const { return shape_; }
    // Number of steps already returned by next().
    std::uint64_t steps_read() const { return steps_read_; }

    // Returns the next (L+1)*D block, valid until the following call, or an
    // empty span once all T steps have been consumed.
    std::span<const double> next();

    // Repositions so the following next() returns step t (zero-based).
    // Requires a seekable source.
    void seek_step(std::uint64_t t);

    std::size_t buffer_bytes() const { return raw_.capacity() + block_.capacity() * sizeof(double); }

private:
    std::istream& source_;
    TrajectoryShape shape_;
    std::uint64_t steps_read_ = 0;
    std::vector<unsigned char> raw_;
    std::vector<double> block_;
};

TrajectoryShape read_trajectory_header(std::istream& source);
HiddenTrajectory read_trajectory(std::istream& source);
HiddenTrajectory read_trajectory_file(const fs::path& path);

struct TokenStats {
    std::vector<double> chosen_logprob;  // natural log, <= 0
    std::vector<double> max_prob;        // (0, 1]
    std::vector<double> entropy;         // nats, >= 0

    std::size_t size() const { return chosen_logprob.size(); }
    bool consistent() const { return max_prob.size() == size() && entropy.size() == size(); }
};

std::uint64_t write_token_stats(const TokenStats& stats, std::ostream& sink);
TokenStats read_token_stats(std::istream& source);
std::uint64_t read_token_stats_length(std::istream& source);

// dt: (T-1)x(L+1), dl: Tx L, optional cosine counterparts of the same shapes.
struct DeltaGrid {
    std::uint64_t tokens = 0;
    std::uint64_t layers = 0;  // L+1
    Grid dt;
    Grid dl;
    std::optional<Grid> ct;
    std::optional<Grid> cl;
};

std::uint64_t write_delta_grid(const DeltaGrid& grid, std::ostream& sink);
DeltaGrid read_delta_grid(std::istream& source);
void write_delta_grid_file(const DeltaGrid& grid, const fs::path& path);
DeltaGrid read_delta_grid_file(const fs::path& path);

struct DeltaGridHeader {
    std::uint64_t tokens = 0;
    std::uint64_t layers = 0;
    bool has_ct = false;
    bool has_cl = false;
};
DeltaGridHeader read_delta_grid_header(std::istream& source);

// (L+1)xD token-averaged hidden states, persisted as f64 (LSUM).
struct LayerSummary {
    Grid rows;
};

std::uint64_t write_layer_summary(const LayerSummary& summary, std::ostream& sink);
LayerSummary read_layer_summary(std::istream& source);

struct SegmentSpan {
    std::string name;  // think | answer | analysis | final | other
    std::uint64_t start = 0;  // 1-based, inclusive
    std::uint64_t end = 0;    // inclusive

    friend bool operator==(const SegmentSpan&, const SegmentSpan&) = default;
};

bool is_known_segment_name(std::string_view name);

struct TensorRefs {
    std::optional<std::string> trajectory;
    std::optional<std::string> delta_grid;
    std::optional<std::string> layer_summary;
    std::optional<std::string> token_stats;

    bool has_tensor() const { return trajectory || delta_grid || layer_summary; }
};

struct GenerationRecord {
    std::string id;
    std::string model;
    std::string dataset;
    std::optional<std::string> group;
    std::optional<bool> label;
    std::string text;
    std::optional<std::uint64_t> num_tokens;
    std::optional<TokenStats> token_stats;  // inline stats only
    std::vector<SegmentSpan> segments;
    TensorRefs tensor_refs;
    std::optional<std::string> gold;
    nlohmann::json extra = nlohmann::json::object();  // unknown fields, preserved verbatim
    fs::path base_dir;  // directory the tensor_refs are relative to

    fs::path resolve(const std::string& ref) const { return base_dir / ref; }
};

struct Manifest {
    std::string dataset;
    std::vector<GenerationRecord> records;
    nlohmann::json extra = nlohmann::json::object();
};

Manifest parse_manifest(std::string_view document, const fs::path& base_dir = {});
Manifest load_manifest(const fs::path& path);
std::string dump_manifest(const Manifest& manifest);
// Writes the manifest; tensor refs are rewritten relative to the new location.
void save_manifest(const Manifest& manifest, const fs::path& path);

// Token statistics from the inline copy or the TOKS sidecar, if any.
std::optional<TokenStats> load_token_stats(const GenerationRecord& record);

struct ValidationEntry {
    std::string record_id;
    std::string check;
    std::string message;
};

struct ValidationReport {
    std::size_t records_checked = 0;
    std::vector<ValidationEntry> errors;

    bool valid() const { return errors.empty(); }
    bool has(std::string_view record_id, std::string_view check) const;
};

struct ValidationOptions {
    // Full finiteness scan and summary-vs-trajectory recomputation instead of
    // the sampled checks.
    bool deep = false;
};

ValidationReport validate_dataset(std::span<const GenerationRecord> records, const ValidationOptions& options = {});

std::ifstream open_input(const fs::path& path);
std::ofstream open_output(const fs::path& path);

}  // namespace stalt::trajstore
