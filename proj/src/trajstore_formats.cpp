#include "stalt/trajstore.hpp"

#include "stalt/error.hpp"
#include "stalt/halfprec.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace stalt::trajstore {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put_le(unsigned char* out, T value) {
    using U = std::make_unsigned_t<T>;
    auto bits = static_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out[i] = static_cast<unsigned char>(bits & 0xffu);
        bits = static_cast<U>(bits >> 8);
    }
}

template <typename T>
T get_le(const unsigned char* in) {
    using U = std::make_unsigned_t<T>;
    U bits = 0;
    for (std::size_t i = sizeof(T); i-- > 0;) {
        bits = static_cast<U>((bits << 8) | in[i]);
    }
    return static_cast<T>(bits);
}

void put_f32(unsigned char* out, float v) { put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v)); }
float get_f32(const unsigned char* in) { return std::bit_cast<float>(get_le<std::uint32_t>(in)); }
void put_f64(unsigned char* out, double v) { put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v)); }
double get_f64(const unsigned char* in) { return std::bit_cast<double>(get_le<std::uint64_t>(in)); }

void write_bytes(std::ostream& sink, const unsigned char* data, std::size_t n) {
    sink.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!sink) throw Error("sink write failure");
}

// Reads exactly n bytes; returns how many were actually available.
std::size_t read_bytes(std::istream& source, unsigned char* data, std::size_t n) {
    source.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n));
    return static_cast<std::size_t>(source.gcount());
}

void check_magic(const unsigned char* header, std::string_view magic) {
    if (std::memcmp(header, magic.data(), 4) != 0) throw Error("bad magic");
}

void check_version(std::uint32_t version) {
    if (version != kFormatVersion) {
        throw Error("version unsupported: " + std::to_string(version));
    }
}

void read_header(std::istream& source, unsigned char* header, std::size_t n, std::string_view magic) {
    const std::size_t got = read_bytes(source, header, n);
    if (got >= 4) check_magic(header, magic);
    if (got < n) {
        throw Error("truncated header: expected " + std::to_string(n) + " bytes, got " + std::to_string(got));
    }
    check_version(get_le<std::uint32_t>(header + 4));
}

void encode_value(unsigned char* out, double v, Dtype dtype) {
    const auto f = static_cast<float>(v);
    switch (dtype) {
        case Dtype::f32: put_f32(out, f); break;
        case Dtype::f16: put_le<std::uint16_t>(out, halfprec::float_to_f16(f)); break;
        case Dtype::bf16: put_le<std::uint16_t>(out, halfprec::float_to_bf16(f)); break;
    }
}

double decode_value(const unsigned char* in, Dtype dtype) {
    switch (dtype) {
        case Dtype::f32: return get_f32(in);
        case Dtype::f16: return halfprec::f16_to_float(get_le<std::uint16_t>(in));
        case Dtype::bf16: return halfprec::bf16_to_float(get_le<std::uint16_t>(in));
    }
    return 0.0;
}

Dtype dtype_from_code(std::uint8_t code) {
    if (code > 2) throw Error("unknown dtype code " + std::to_string(code));
    return static_cast<Dtype>(code);
}

void write_f32_values(std::ostream& sink, std::span<const double> values) {
    std::vector<unsigned char> buf(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) put_f32(buf.data() + 4 * i, static_cast<float>(values[i]));
    write_bytes(sink, buf.data(), buf.size());
}

void read_f32_values(std::istream& source, std::span<double> out, std::string_view what) {
    std::vector<unsigned char> buf(out.size() * 4);
    const std::size_t got = read_bytes(source, buf.data(), buf.size());
    if (got != buf.size()) {
        throw Error("truncated " + std::string(what) + ": expected " + std::to_string(buf.size()) +
                    " bytes, got " + std::to_string(got));
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = get_f32(buf.data() + 4 * i);
}

}  // namespace

std::size_t dtype_size(Dtype dtype) { return dtype == Dtype::f32 ? 4 : 2; }

std::string_view dtype_name(Dtype dtype) {
    switch (dtype) {
        case Dtype::f32: return "f32";
        case Dtype::f16: return "f16";
        case Dtype::bf16: return "bf16";
    }
    return "?";
}

Dtype parse_dtype(std::string_view name) {
    if (name == "f32") return Dtype::f32;
    if (name == "f16") return Dtype::f16;
    if (name == "bf16") return Dtype::bf16;
    throw Error("unknown dtype '" + std::string(name) + "'");
}

void check_shape(const TrajectoryShape& shape) {
    if (shape.tokens < 1) throw Error("T must be ≥ 1");
    if (shape.layers < 2) throw Error("need at least embedding plus one layer");
    if (shape.width < 1) throw Error("D must be ≥ 1");
}

// ---------------------------------------------------------------------------
// STRJ

TrajectoryWriter::TrajectoryWriter(std::ostream& sink, const TrajectoryShape& shape) : sink_(sink), shape_(shape) {
    check_shape(shape_);
    // magic(4) version(4) dtype(1) pad(3) T(8) L+1(8) D(8)
    std::array<unsigned char, kStrjHeaderBytes> header{};
    std::memcpy(header.data(), "STRJ", 4);
    put_le<std::uint32_t>(header.data() + 4, kFormatVersion);
    header[8] = static_cast<unsigned char>(shape_.dtype);
    put_le<std::uint64_t>(header.data() + 12, shape_.tokens);
    put_le<std::uint64_t>(header.data() + 20, shape_.layers);
    put_le<std::uint64_t>(header.data() + 28, shape_.width);
    write_bytes(sink_, header.data(), header.size());
    scratch_.resize(static_cast<std::size_t>(shape_.step_bytes()));
}

void TrajectoryWriter::append_step(std::span<const double> block) {
    if (block.size() != shape_.step_values()) {
        throw Error("step block has " + std::to_string(block.size()) + " values, expected " +
                    std::to_string(shape_.step_values()));
    }
    if (steps_written_ >= shape_.tokens) throw Error("more steps than declared T");
    const std::size_t width = dtype_size(shape_.dtype);
    for (std::size_t i = 0; i < block.size(); ++i) {
        if (!std::isfinite(block[i])) throw Error("non-finite value in trajectory");
        encode_value(scratch_.data() + i * width, block[i], shape_.dtype);
    }
    write_bytes(sink_, scratch_.data(), scratch_.size());
    ++steps_written_;
}

std::uint64_t TrajectoryWriter::finish() {
    if (steps_written_ != shape_.tokens) {
        throw Error("wrote " + std::to_string(steps_written_) + " steps, header declares " +
                    std::to_string(shape_.tokens));
    }
    sink_.flush();
    if (!sink_) throw Error("sink write failure");
    return kStrjHeaderBytes + shape_.payload_bytes();
}

std::uint64_t write_trajectory(const HiddenTrajectory& trajectory, std::ostream& sink) {
    check_shape(trajectory.shape);
    if (trajectory.values.size() != trajectory.shape.tokens * trajectory.shape.step_values()) {
        throw Error("trajectory payload does not match declared dims");
    }
    TrajectoryWriter writer(sink, trajectory.shape);
    for (std::size_t t = 0; t < trajectory.shape.tokens; ++t) writer.append_step(trajectory.step(t));
    return writer.finish();
}

void write_trajectory_file(const HiddenTrajectory& trajectory, const fs::path& path) {
    auto out = open_output(path);
    write_trajectory(trajectory, out);
}

TrajectoryShape read_trajectory_header(std::istream& source) {
    std::array<unsigned char, kStrjHeaderBytes> header{};
    read_header(source, header.data(), header.size(), "STRJ");
    TrajectoryShape shape;
    shape.dtype = dtype_from_code(header[8]);
    shape.tokens = get_le<std::uint64_t>(header.data() + 12);
    shape.layers = get_le<std::uint64_t>(header.data() + 20);
    shape.width = get_le<std::uint64_t>(header.data() + 28);
    check_shape(shape);
    return shape;
}

TrajectoryReader::TrajectoryReader(std::istream& source) : source_(source), shape_(read_trajectory_header(source)) {
    raw_.resize(static_cast<std::size_t>(shape_.step_bytes()));
    block_.resize(shape_.step_values());
}

std::span<const double> TrajectoryReader::next() {
    if (steps_read_ >= shape_.tokens) return {};
    const std::size_t got = read_bytes(source_, raw_.data(), raw_.size());
    if (got != raw_.size()) {
        const std::uint64_t expected = kStrjHeaderBytes + shape_.payload_bytes();
        const std::uint64_t actual = kStrjHeaderBytes + steps_read_ * shape_.step_bytes() + got;
        throw Error("truncated at step " + std::to_string(steps_read_ + 1) + ": expected " +
                    std::to_string(expected) + " bytes, got " + std::to_string(actual));
    }
    const std::size_t width = dtype_size(shape_.dtype);
    for (std::size_t i = 0; i < block_.size(); ++i) block_[i] = decode_value(raw_.data() + i * width, shape_.dtype);
    ++steps_read_;
    return block_;
}

void TrajectoryReader::seek_step(std::uint64_t t) {
    if (t > shape_.tokens) throw Error("step " + std::to_string(t) + " beyond T");
    source_.clear();
    source_.seekg(static_cast<std::streamoff>(kStrjHeaderBytes + t * shape_.step_bytes()));
    if (!source_) throw Error("source is not seekable");
    steps_read_ = t;
}

HiddenTrajectory read_trajectory(std::istream& source) {
    TrajectoryReader reader(source);
    HiddenTrajectory out;
    out.shape = reader.shape();
    out.values.reserve(static_cast<std::size_t>(out.shape.tokens) * out.shape.step_values());
    for (auto block = reader.next(); !block.empty(); block = reader.next()) {
        out.values.insert(out.values.end(), block.begin(), block.end());
    }
    return out;
}

HiddenTrajectory read_trajectory_file(const fs::path& path) {
    auto in = open_input(path);
    return read_trajectory(in);
}

// ---------------------------------------------------------------------------
// TOKS

std::uint64_t write_token_stats(const TokenStats& stats, std::ostream& sink) {
    if (!stats.consistent()) throw Error("token stats columns differ in length");
    if (stats.size() == 0) throw Error("T must be ≥ 1");
    std::array<unsigned char, kToksHeaderBytes> header{};
    std::memcpy(header.data(), "TOKS", 4);
    put_le<std::uint32_t>(header.data() + 4, kFormatVersion);
    put_le<std::uint64_t>(header.data() + 8, stats.size());
    write_bytes(sink, header.data(), header.size());
    write_f32_values(sink, stats.chosen_logprob);
    write_f32_values(sink, stats.max_prob);
    write_f32_values(sink, stats.entropy);
    sink.flush();
    return kToksHeaderBytes + 12 * stats.size();
}

std::uint64_t read_token_stats_length(std::istream& source) {
    std::array<unsigned char, kToksHeaderBytes> header{};
    read_header(source, header.data(), header.size(), "TOKS");
    return get_le<std::uint64_t>(header.data() + 8);
}

TokenStats read_token_stats(std::istream& source) {
    const auto n = static_cast<std::size_t>(read_token_stats_length(source));
    TokenStats stats;
    stats.chosen_logprob.resize(n);
    stats.max_prob.resize(n);
    stats.entropy.resize(n);
    read_f32_values(source, stats.chosen_logprob, "token stats");
    read_f32_values(source, stats.max_prob, "token stats");
    read_f32_values(source, stats.entropy, "token stats");
    return stats;
}

// ---------------------------------------------------------------------------
// DGRD

namespace {

void check_grid_shape(const Grid& g, std::uint64_t rows, std::uint64_t cols, std::string_view name) {
    if (g.rows != rows || g.cols != cols || g.values.size() != rows * cols) {
        throw Error(std::string(name) + " grid shape " + std::to_string(g.rows) + "x" + std::to_string(g.cols) +
                    " does not match " + std::to_string(rows) + "x" + std::to_string(cols));
    }
}

void check_l2(const Grid& g) {
    for (double v : g.values) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw Error("corrupt grid");
    }
}

void check_cos(const Grid& g) {
    for (double v : g.values) {
        if (!(v >= -1.0 && v <= 1.0)) throw Error("corrupt grid");
    }
}

}  // namespace

std::uint64_t write_delta_grid(const DeltaGrid& grid, std::ostream& sink) {
    if (grid.tokens < 1) throw Error("T must be ≥ 1");
    if (grid.layers < 2) throw Error("need at least embedding plus one layer");
    const std::uint64_t t = grid.tokens;
    const std::uint64_t lp1 = grid.layers;
    check_grid_shape(grid.dt, t - 1, lp1, "dt");
    check_grid_shape(grid.dl, t, lp1 - 1, "dl");
    if (grid.ct) check_grid_shape(*grid.ct, t - 1, lp1, "ct");
    if (grid.cl) check_grid_shape(*grid.cl, t, lp1 - 1, "cl");

    std::array<unsigned char, kDgrdHeaderBytes> header{};
    std::memcpy(header.data(), "DGRD", 4);
    put_le<std::uint32_t>(header.data() + 4, kFormatVersion);
    header[8] = static_cast<unsigned char>((grid.ct ? 1u : 0u) | (grid.cl ? 2u : 0u));
    put_le<std::uint64_t>(header.data() + 12, t);
    put_le<std::uint64_t>(header.data() + 20, lp1);
    // bytes 28..31 stay zero
    write_bytes(sink, header.data(), header.size());
    write_f32_values(sink, grid.dt.values);
    write_f32_values(sink, grid.dl.values);
    std::uint64_t values = grid.dt.size() + grid.dl.size();
    if (grid.ct) {
        write_f32_values(sink, grid.ct->values);
        values += grid.ct->size();
    }
    if (grid.cl) {
        write_f32_values(sink, grid.cl->values);
        values += grid.cl->size();
    }
    sink.flush();
    return kDgrdHeaderBytes + 4 * values;
}

DeltaGridHeader read_delta_grid_header(std::istream& source) {
    std::array<unsigned char, kDgrdHeaderBytes> header{};
    read_header(source, header.data(), header.size(), "DGRD");
    DeltaGridHeader h;
    const unsigned flags = header[8];
    if (flags & ~3u) throw Error("unknown DGRD flags " + std::to_string(flags));
    h.has_ct = flags & 1u;
    h.has_cl = flags & 2u;
    h.tokens = get_le<std::uint64_t>(header.data() + 12);
    h.layers = get_le<std::uint64_t>(header.data() + 20);
    if (h.tokens < 1) throw Error("T must be ≥ 1");
    if (h.layers < 2) throw Error("need at least embedding plus one layer");
    return h;
}

DeltaGrid read_delta_grid(std::istream& source) {
    const DeltaGridHeader h = read_delta_grid_header(source);
    DeltaGrid grid;
    grid.tokens = h.tokens;
    grid.layers = h.layers;
    const auto t = static_cast<std::size_t>(h.tokens);
    const auto lp1 = static_cast<std::size_t>(h.layers);
    grid.dt = Grid(t - 1, lp1);
    grid.dl = Grid(t, lp1 - 1);
    read_f32_values(source, grid.dt.values, "delta grid");
    read_f32_values(source, grid.dl.values, "delta grid");
    check_l2(grid.dt);
    check_l2(grid.dl);
    if (h.has_ct) {
        grid.ct = Grid(t - 1, lp1);
        read_f32_values(source, grid.ct->values, "delta grid");
        check_cos(*grid.ct);
    }
    if (h.has_cl) {
        grid.cl = Grid(t, lp1 - 1);
        read_f32_values(source, grid.cl->values, "delta grid");
        check_cos(*grid.cl);
    }
    return grid;
}

void write_delta_grid_file(const DeltaGrid& grid, const fs::path& path) {
    auto out = open_output(path);
    write_delta_grid(grid, out);
}

DeltaGrid read_delta_grid_file(const fs::path& path) {
    auto in = open_input(path);
    return read_delta_grid(in);
}

// ---------------------------------------------------------------------------
// LSUM: magic(4) version(4) L+1(8) D(8), then f64 rows

std::uint64_t write_layer_summary(const LayerSummary& summary, std::ostream& sink) {
    const Grid& g = summary.rows;
    if (g.rows < 2 || g.cols < 1) throw Error("layer summary needs at least two layers and D ≥ 1");
    std::array<unsigned char, kLsumHeaderBytes> header{};
    std::memcpy(header.data(), "LSUM", 4);
    put_le<std::uint32_t>(header.data() + 4, kFormatVersion);
    put_le<std::uint64_t>(header.data() + 8, g.rows);
    put_le<std::uint64_t>(header.data() + 16, g.cols);
    write_bytes(sink, header.data(), header.size());
    std::vector<unsigned char> buf(g.size() * 8);
    for (std::size_t i = 0; i < g.size(); ++i) put_f64(buf.data() + 8 * i, g.values[i]);
    write_bytes(sink, buf.data(), buf.size());
    sink.flush();
    return kLsumHeaderBytes + buf.size();
}

LayerSummary read_layer_summary(std::istream& source) {
    std::array<unsigned char, kLsumHeaderBytes> header{};
    read_header(source, header.data(), header.size(), "LSUM");
    const auto rows = static_cast<std::size_t>(get_le<std::uint64_t>(header.data() + 8));
    const auto cols = static_cast<std::size_t>(get_le<std::uint64_t>(header.data() + 16));
    if (rows < 2 || cols < 1) throw Error("layer summary needs at least two layers and D ≥ 1");
    LayerSummary summary{Grid(rows, cols)};
    std::vector<unsigned char> buf(rows * cols * 8);
    const std::size_t got = read_bytes(source, buf.data(), buf.size());
    if (got != buf.size()) {
        throw Error("truncated layer summary: expected " + std::to_string(buf.size()) + " bytes, got " +
                    std::to_string(got));
    }
    for (std::size_t i = 0; i < summary.rows.size(); ++i) summary.rows.values[i] = get_f64(buf.data() + 8 * i);
    return summary;
}

// ---------------------------------------------------------------------------

std::ifstream open_input(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return in;
}

std::ofstream open_output(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    return out;
}

}  // namespace stalt::trajstore
