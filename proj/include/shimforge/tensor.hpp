#pragma once

#include "shimforge/core.hpp"

namespace shimforge {

/// Dense n-d array of doubles, row-major.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s, double fill = 0.0) : shape(std::move(s)) {
        v.assign(numel(shape), fill);
    }

    static std::size_t numel(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) n *= static_cast<std::size_t>(d);
        return n;
    }

    std::size_t size() const { return v.size(); }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    double* data() { return v.data(); }
    const double* data() const { return v.data(); }

    static Tensor randn(std::vector<int> s, Rng& rng, double scale = 1.0) {
        Tensor t(std::move(s));
        for (double& x : t.v) x = rng.normal() * scale;
        return t;
    }

    void require_finite(const char* where) const {
        for (double x : v)
            if (!std::isfinite(x)) throw NumericError(std::string(where) + ": non-finite value");
    }
};

inline double frobenius_norm(const Tensor& t) {
    double s = 0.0;
    for (double x : t.v) s += x * x;
    return std::sqrt(s);
}

inline double dot(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.v.size(); ++i) s += a.v[i] * b.v[i];
    return s;
}

inline Tensor operator+(const Tensor& a, const Tensor& b) {
    Tensor out = a;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += b.v[i];
    return out;
}

inline Tensor operator-(const Tensor& a, const Tensor& b) {
    Tensor out = a;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] -= b.v[i];
    return out;
}

inline Tensor operator*(double s, const Tensor& a) {
    Tensor out = a;
    for (double& x : out.v) x *= s;
    return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.v.size(); ++i) m = std::max(m, std::abs(a.v[i] - b.v[i]));
    return m;
}

}  // namespace shimforge
