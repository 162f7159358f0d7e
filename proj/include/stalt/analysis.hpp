#pragma once

#include "stalt/grid.hpp"
#include "stalt/trajstore.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace stalt::analysis {

namespace fs = std::filesystem;

// Linear interpolation of an R x C grid onto B relative positions. Bin b reads
// source row b*(R-1)/(B-1), so the first and last bins hit the end rows exactly.
Grid resample_grid(const Grid& grid, std::size_t bins);

enum class Quantity { dtime, dlayer };

std::string_view quantity_name(Quantity q);
Quantity parse_quantity(std::string_view name);

struct HeatmapGrid {
    Quantity quantity = Quantity::dtime;
    Grid values;  // bins x layer columns
    std::size_t first_layer = 0;  // layer index of column 0 (1 for dlayer)
    std::size_t n_correct = 0;
    std::size_t n_incorrect = 0;
};

struct LabeledGrid {
    Grid grid;
    bool correct = false;
};

// Mean over correct records minus mean over incorrect records after
// resampling every grid to `bins` rows. Cohort sums use pairwise summation in
// record order.
HeatmapGrid difference_heatmap(std::span<const LabeledGrid> records, Quantity quantity, std::size_t bins = 100,
                               std::size_t workers = 1);

// Loads grids from each labeled record's DGRD; unlabeled records are skipped.
HeatmapGrid difference_heatmap(std::span<const trajstore::GenerationRecord> records, Quantity quantity,
                               std::size_t bins = 100, std::size_t workers = 1);

// CSV rows "bin,layer,value", bins outer, layers inner.
std::string heatmap_csv(const HeatmapGrid& heatmap);
std::string heatmap_json(const HeatmapGrid& heatmap);

// Synthetic cohorts. Each hidden state is a per-record layer offset plus
// per-step Gaussian noise:
//   h_t^l = o^l + s * a_l * e_t^l
// The offsets take large jumps into the hotspot layers, so layer deltas
// peak there. The noise scale a_l is `noise` everywhere except the top
// layer, which is louder for every record, and the hotspot layers of correct
// records, which get `multiplier` on top. The per-record scale s is lognormal.
struct SynthSpec {
    std::size_t n = 200;
    std::uint64_t t_min = 24;
    std::uint64_t t_max = 96;
    std::uint64_t layers = 8;  // L; trajectories carry L+1 states
    std::uint64_t width = 16;  // D
    double noise = 1.0;
    std::vector<std::uint64_t> hotspot_layers{4, 5};
    double multiplier = 1.6;
    double correct_fraction = 0.5;
    std::uint64_t seed = 7;
    trajstore::Dtype dtype = trajstore::Dtype::f32;
    // Two-group fixture: records alternate between groups "A" and "B" and
    // only group A receives the hotspot amplification.
    bool two_group = false;

    void check() const;
};

// Named presets: "hotspot" and "two-group".
SynthSpec synth_preset(std::string_view name);

struct SynthResult {
    trajstore::Manifest manifest;
    fs::path manifest_path;
    fs::path gold_path;
};

// Writes STRJ files (and TOKS sidecars when T exceeds the inline limit),
// gold.csv and manifest.json under `out_dir`. Token statistics are drawn with
// a confidence level that rises slightly for correct records.
SynthResult synth_cohort(const SynthSpec& spec, const fs::path& out_dir);

}  // namespace stalt::analysis
