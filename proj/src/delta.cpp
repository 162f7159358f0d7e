#include "stalt/delta.hpp"

#include "stalt/error.hpp"

#include <algorithm>
#include <cmath>

namespace stalt::delta {

namespace {

double distance(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

double norm(std::span<const double> a) {
    double acc = 0.0;
    for (double v : a) acc += v * v;
    return std::sqrt(acc);
}

double dot(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

}  // namespace

trajstore::DeltaGrid DeltaResult::to_delta_grid() const {
    if (!dt || !dl) throw Error("delta grid needs both temporal and layer grids");
    trajstore::DeltaGrid grid;
    grid.tokens = tokens;
    grid.layers = layers;
    grid.dt = *dt;
    grid.dl = *dl;
    grid.ct = ct;
    grid.cl = cl;
    return grid;
}

DeltaAccumulator::DeltaAccumulator(std::uint64_t layers, std::uint64_t width, Products products)
    : layers_(layers), width_(width), products_(products) {
    if (layers_ < 2) throw Error("need at least embedding plus one layer");
    if (width_ < 1) throw Error("D must be ≥ 1");
    result_.layers = layers_;
    result_.width = width_;
    const auto lp1 = static_cast<std::size_t>(layers_);
    if (products_.temporal) result_.dt = Grid(0, lp1);
    if (products_.layer) result_.dl = Grid(0, lp1 - 1);
    if (products_.cosine) {
        result_.ct = Grid(0, lp1);
        result_.cl = Grid(0, lp1 - 1);
    }
    if (products_.summary) sums_.assign(lp1 * width_, 0.0);
    if (products_.temporal || products_.cosine) prev_.resize(lp1 * width_);
    if (products_.cosine) {
        prev_norms_.resize(lp1);
        norms_.resize(lp1);
    }
}

void DeltaAccumulator::push(std::span<const double> block) {
    const auto lp1 = static_cast<std::size_t>(layers_);
    const auto d = static_cast<std::size_t>(width_);
    if (block.size() != lp1 * d) throw Error("step block size does not match (L+1)xD");
    auto state = [&](std::span<const double> b, std::size_t l) { return b.subspan(l * d, d); };

    if (products_.cosine) {
        for (std::size_t l = 0; l < lp1; ++l) norms_[l] = norm(state(block, l));
    }
    auto cosine = [&](std::span<const double> a, double na, std::span<const double> b, double nb) {
        if (na < kDegenerateNorm || nb < kDegenerateNorm) {
            ++result_.degenerate_cosines;
            return 0.0;
        }
        return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
    };

    if (steps_ > 0) {
        if (products_.temporal) {
            auto& g = *result_.dt;
            for (std::size_t l = 0; l < lp1; ++l) g.values.push_back(distance(state(block, l), state(prev_, l)));
            ++g.rows;
        }
        if (products_.cosine) {
            auto& g = *result_.ct;
            for (std::size_t l = 0; l < lp1; ++l) {
                g.values.push_back(cosine(state(block, l), norms_[l], state(prev_, l), prev_norms_[l]));
            }
            ++g.rows;
        }
    }
    if (products_.layer) {
        auto& g = *result_.dl;
        for (std::size_t l = 1; l < lp1; ++l) g.values.push_back(distance(state(block, l), state(block, l - 1)));
        ++g.rows;
    }
    if (products_.cosine) {
        auto& g = *result_.cl;
        for (std::size_t l = 1; l < lp1; ++l) {
            g.values.push_back(cosine(state(block, l), norms_[l], state(block, l - 1), norms_[l - 1]));
        }
        ++g.rows;
    }
    if (products_.summary) {
        for (std::size_t i = 0; i < block.size(); ++i) sums_[i] += block[i];
    }
    if (!prev_.empty()) std::copy(block.begin(), block.end(), prev_.begin());
    if (products_.cosine) std::swap(prev_norms_, norms_);
    ++steps_;
}

DeltaResult DeltaAccumulator::finish() {
    if (steps_ < 1) throw Error("T must be ≥ 1");
    if ((products_.temporal || products_.cosine) && steps_ < 2) {
        throw Error("trajectory too short for temporal deltas");
    }
    result_.tokens = steps_;
    if (products_.summary) {
        Grid summary(layers_, width_);
        const double inv = static_cast<double>(steps_);
        for (std::size_t i = 0; i < sums_.size(); ++i) summary.values[i] = sums_[i] / inv;
        result_.summary = std::move(summary);
    }
    return std::move(result_);
}

DeltaResult compute(trajstore::TrajectoryReader& reader, Products products) {
    DeltaAccumulator acc(reader.shape().layers, reader.shape().width, products);
    for (auto block = reader.next(); !block.empty(); block = reader.next()) acc.push(block);
    return acc.finish();
}

DeltaResult compute(const trajstore::HiddenTrajectory& trajectory, Products products) {
    trajstore::check_shape(trajectory.shape);
    DeltaAccumulator acc(trajectory.shape.layers, trajectory.shape.width, products);
    for (std::size_t t = 0; t < trajectory.shape.tokens; ++t) acc.push(trajectory.step(t));
    return acc.finish();
}

Grid delta_time(trajstore::TrajectoryReader& reader) {
    return *compute(reader, {.temporal = true, .layer = false}).dt;
}

Grid delta_layer(trajstore::TrajectoryReader& reader) {
    return *compute(reader, {.temporal = false, .layer = true}).dl;
}

CosineGrids cosine_grids(trajstore::TrajectoryReader& reader) {
    DeltaResult r = compute(reader, {.temporal = false, .layer = false, .cosine = true});
    return {std::move(*r.ct), std::move(*r.cl), r.degenerate_cosines};
}

Grid layer_summary(trajstore::TrajectoryReader& reader) {
    return *compute(reader, {.temporal = false, .layer = false, .summary = true}).summary;
}

Grid layer_summary(trajstore::TrajectoryReader& reader, std::span<const std::uint8_t> mask) {
    const auto& shape = reader.shape();
    if (mask.size() != shape.tokens) throw Error("selection mask length does not match T");
    DeltaAccumulator acc(shape.layers, shape.width, {.temporal = false, .layer = false, .summary = true});
    std::size_t t = 0;
    for (auto block = reader.next(); !block.empty(); block = reader.next(), ++t) {
        if (mask[t]) acc.push(block);
    }
    if (acc.steps() == 0) throw Error("selection too short");
    return *acc.finish().summary;
}

AlignedGrids align(const Grid& dt, const Grid& dl) {
    if (dl.rows != dt.rows + 1 || dt.cols != dl.cols + 1 || dl.cols < 1) {
        throw Error("shape mismatch: dt " + std::to_string(dt.rows) + "x" + std::to_string(dt.cols) + ", dl " +
                    std::to_string(dl.rows) + "x" + std::to_string(dl.cols));
    }
    const std::size_t rows = dt.rows;
    const std::size_t layers = dl.cols;
    AlignedGrids out{Grid(rows, layers), Grid(rows, layers)};
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t l = 0; l < layers; ++l) {
            out.at(r, l) = dt(r, l + 1);
            out.al(r, l) = dl(r + 1, l);
        }
    }
    return out;
}

}  // namespace stalt::delta
