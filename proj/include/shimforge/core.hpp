#pragma once

// Shared primitives: error types, the Image raster, small dense matrices,
// and the deterministic RNG every stage draws from.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace shimforge {

// ---------------------------------------------------------------- errors

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

class ShapeError : public ConfigError {
public:
    explicit ShapeError(const std::string& m) : ConfigError(m) {}
};

class CapacityError : public ConfigError {
public:
    explicit CapacityError(const std::string& m) : ConfigError(m) {}
};

class CalibrationError : public ConfigError {
public:
    explicit CalibrationError(const std::string& m) : ConfigError(m) {}
};

class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& m) : std::runtime_error(m) {}
};

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& m) : std::runtime_error(m) {}
};

// ---------------------------------------------------------------- image

inline double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

/// H x W x C raster, 64-bit samples in [0,1], stored row-major per channel.
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> data;

    Image() = default;
    Image(int h, int w, int c, double fill = 0.0)
        : height(h), width(w), channels(c),
          data(static_cast<std::size_t>(h) * w * c, fill) {}

    double& at(int c, int y, int x) {
        return data[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    double at(int c, int y, int x) const {
        return data[(static_cast<std::size_t>(c) * height + y) * width + x];
    }

    std::size_t size() const { return data.size(); }

    bool same_shape(const Image& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }

    void clamp() {
        for (double& v : data) v = clamp01(v);
    }

    void require_finite(const char* where) const {
        for (double v : data)
            if (!std::isfinite(v)) throw NumericError(std::string(where) + ": non-finite sample");
    }
};

/// BT.601 luma. Grayscale images pass through unchanged.
inline std::vector<double> luminance(const Image& img) {
    std::vector<double> y(static_cast<std::size_t>(img.height) * img.width);
    if (img.channels == 1) {
        std::copy(img.data.begin(), img.data.end(), y.begin());
        return y;
    }
    if (img.channels != 3) throw ShapeError("luminance: expected 1 or 3 channels");
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c)
            y[static_cast<std::size_t>(r) * img.width + c] =
                0.299 * img.at(0, r, c) + 0.587 * img.at(1, r, c) + 0.114 * img.at(2, r, c);
    return y;
}

// ---------------------------------------------------------------- matrix

/// Dense row-major matrix of doubles. Small sizes only; no BLAS behind it.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Mat() = default;
    Mat(int r, int c, double fill = 0.0) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, fill) {}

    double& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
};

inline Mat matmul(const Mat& a, const Mat& b) {
    if (a.cols != b.rows) throw ShapeError("matmul: inner dimensions differ");
    Mat out(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i)
        for (int k = 0; k < a.cols; ++k) {
            const double aik = a.at(i, k);
            if (aik == 0.0) continue;
            for (int j = 0; j < b.cols; ++j) out.at(i, j) += aik * b.at(k, j);
        }
    return out;
}

inline Mat transpose(const Mat& a) {
    Mat out(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) out.at(j, i) = a.at(i, j);
    return out;
}

// ---------------------------------------------------------------- hashing

inline std::uint64_t fnv1a64(const void* bytes, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64(std::string_view s) { return fnv1a64(s.data(), s.size()); }

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Counter-based fan-out: one master seed, one tag per stage, one index per
/// item. Stages stay reproducible in isolation.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stage, std::uint64_t index = 0) {
    return splitmix64(splitmix64(master ^ fnv1a64(stage)) + (index + 1) * 0x9e3779b97f4a7c15ULL);
}

// ---------------------------------------------------------------- rng

/// mt19937_64 engine with explicit uniform/normal transforms so streams are
/// identical across standard library versions.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    /// Uniform in [0,1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo,hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(next_u64() % span);
    }

    /// Standard normal via Box-Muller.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform();  // (0,1]
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.141592653589793238462643383279502884 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace shimforge
