#pragma once

#include "stalt/grid.hpp"
#include "stalt/trajstore.hpp"

#include <cstdint>
#include <optional>
#include <span>

namespace stalt::delta {

// Norms below this are treated as zero vectors when forming cosines.
constexpr double kDegenerateNorm = 1e-12;

struct Products {
    bool temporal = true;  // dt
    bool layer = true;     // dl
    bool cosine = false;   // ct, cl
    bool summary = false;  // token-averaged layer summary

    static Products all() { return {true, true, true, true}; }
};

struct DeltaResult {
    std::uint64_t tokens = 0;
    std::uint64_t layers = 0;  // L+1
    std::uint64_t width = 0;
    std::optional<Grid> dt;       // (T-1)x(L+1)
    std::optional<Grid> dl;       // T x L
    std::optional<Grid> ct;       // (T-1)x(L+1)
    std::optional<Grid> cl;       // T x L
    std::optional<Grid> summary;  // (L+1)xD
    std::uint64_t degenerate_cosines = 0;

    // Requires dt and dl; cosine grids are carried along when present.
    trajstore::DeltaGrid to_delta_grid() const;
};

// Single fused pass over step blocks. Holds the previous block only.
class DeltaAccumulator {
public:
    DeltaAccumulator(std::uint64_t layers, std::uint64_t width, Products products);

    void push(std::span<const double> block);
    std::uint64_t steps() const { return steps_; }
    DeltaResult finish();

private:
    std::uint64_t layers_;
    std::uint64_t width_;
    Products products_;
    std::uint64_t steps_ = 0;
    std::vector<double> prev_;
    std::vector<double> prev_norms_;
    std::vector<double> norms_;
    DeltaResult result_;
    std::vector<double> sums_;
};

DeltaResult compute(trajstore::TrajectoryReader& reader, Products products);
DeltaResult compute(const trajstore::HiddenTrajectory& trajectory, Products products);

Grid delta_time(trajstore::TrajectoryReader& reader);
Grid delta_layer(trajstore::TrajectoryReader& reader);

struct CosineGrids {
    Grid ct;
    Grid cl;
    std::uint64_t degenerate = 0;
};
CosineGrids cosine_grids(trajstore::TrajectoryReader& reader);

Grid layer_summary(trajstore::TrajectoryReader& reader);
// Mean over the steps whose mask entry is non-zero; mask has one entry per step.
Grid layer_summary(trajstore::TrajectoryReader& reader, std::span<const std::uint8_t> mask);

// Aligned grids share indices t = 2..T (rows) and l = 1..L (columns).
struct AlignedGrids {
    Grid at;  // dt without the embedding column
    Grid al;  // dl without the first-token row
};

AlignedGrids align(const Grid& dt, const Grid& dl);

}  // namespace stalt::delta
