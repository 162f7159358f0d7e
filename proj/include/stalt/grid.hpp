#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace stalt {

// Dense row-major 2-D array of doubles. Rows are time steps, columns layers.
struct Grid {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    Grid() = default;
    Grid(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {values.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }

    bool empty() const { return rows == 0 || cols == 0; }
    std::size_t size() const { return values.size(); }

    friend bool operator==(const Grid&, const Grid&) = default;
};

}  // namespace stalt
