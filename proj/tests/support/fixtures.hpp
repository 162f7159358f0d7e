#pragma once

#include "oracle.hpp"

#include "stalt/halfprec.hpp"
#include "stalt/trajstore.hpp"

#include <filesystem>
#include <random>
#include <sstream>
#include <string>

namespace fixtures {

namespace fs = std::filesystem;
using stalt::trajstore::Dtype;
using stalt::trajstore::HiddenTrajectory;

// Rounds a value to what the given storage dtype can hold, so that write/read
// round trips are exact.
inline double representable(double x, Dtype dtype) {
    switch (dtype) {
        case Dtype::f32: return static_cast<float>(x);
        case Dtype::f16: return stalt::halfprec::f16_to_float(stalt::halfprec::float_to_f16(static_cast<float>(x)));
        case Dtype::bf16: return stalt::halfprec::bf16_to_float(stalt::halfprec::float_to_bf16(static_cast<float>(x)));
    }
    return x;
}

inline HiddenTrajectory random_trajectory(std::mt19937_64& rng, std::uint64_t t, std::uint64_t lp, std::uint64_t d,
                                          Dtype dtype = Dtype::f32, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    HiddenTrajectory h;
    h.shape = {t, lp, d, dtype};
    h.values.resize(t * lp * d);
    for (auto& v : h.values) v = representable(normal(rng), dtype);
    return h;
}

inline HiddenTrajectory from_tensor(const oracle::Tensor& x, Dtype dtype = Dtype::f32) {
    HiddenTrajectory h;
    h.shape = {x.size(), x[0].size(), x[0][0].size(), dtype};
    for (const auto& step : x) {
        for (const auto& layer : step) h.values.insert(h.values.end(), layer.begin(), layer.end());
    }
    return h;
}

inline oracle::Tensor to_tensor(const HiddenTrajectory& h) {
    oracle::Tensor x(h.shape.tokens, oracle::Matrix(h.shape.layers, std::vector<double>(h.shape.width)));
    std::size_t k = 0;
    for (auto& step : x) {
        for (auto& layer : step) {
            for (auto& v : layer) v = h.values[k++];
        }
    }
    return x;
}

inline std::string to_bytes(const HiddenTrajectory& h) {
    std::ostringstream out(std::ios::binary);
    stalt::trajstore::write_trajectory(h, out);
    return out.str();
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = fs::temp_directory_path() / ("stalt-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    fs::path path_;
};

inline std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace fixtures
