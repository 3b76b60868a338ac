#pragma once

// 2-D transforms and the small-block SVD used by the watermark schemes and
// metrics. All transforms are orthonormal so energy is preserved and every
// forward/inverse pair round-trips to ~1e-9.

#include <complex>

#include "shimforge/core.hpp"

namespace shimforge::signal {

using cplx = std::complex<double>;

struct Spectrum {
    int height = 0;
    int width = 0;
    std::vector<cplx> data;

    Spectrum() = default;
    Spectrum(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w) {}

    cplx& at(int r, int c) { return data[static_cast<std::size_t>(r) * width + c]; }
    cplx at(int r, int c) const { return data[static_cast<std::size_t>(r) * width + c]; }
};

namespace detail {

inline bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 FFT, no normalization.
inline void fft_pow2(std::vector<cplx>& a, bool inverse) {
    const int n = static_cast<int>(a.size());
    for (int i = 1, j = 0; i < n; ++i) {
        int bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    const double pi = 3.141592653589793238462643383279502884;
    for (int len = 2; len <= n; len <<= 1) {
        const double ang = 2.0 * pi / len * (inverse ? 1.0 : -1.0);
        const cplx wlen(std::cos(ang), std::sin(ang));
        for (int i = 0; i < n; i += len) {
            cplx w(1.0, 0.0);
            for (int j = 0; j < len / 2; ++j) {
                const cplx u = a[i + j];
                const cplx v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

// O(n^2) DFT fallback for sizes that are not powers of two.
inline void dft_naive(std::vector<cplx>& a, bool inverse) {
    const int n = static_cast<int>(a.size());
    const double pi = 3.141592653589793238462643383279502884;
    std::vector<cplx> out(n);
    for (int k = 0; k < n; ++k) {
        cplx acc(0.0, 0.0);
        for (int j = 0; j < n; ++j) {
            const double ang = 2.0 * pi * k * j / n * (inverse ? 1.0 : -1.0);
            acc += a[j] * cplx(std::cos(ang), std::sin(ang));
        }
        out[k] = acc;
    }
    a = std::move(out);
}

inline void fft_1d(std::vector<cplx>& a, bool inverse) {
    if (is_pow2(static_cast<int>(a.size())))
        fft_pow2(a, inverse);
    else
        dft_naive(a, inverse);
}

inline void fft2_axis(Spectrum& s, bool inverse) {
    std::vector<cplx> buf;
    buf.resize(s.width);
    for (int r = 0; r < s.height; ++r) {
        for (int c = 0; c < s.width; ++c) buf[c] = s.at(r, c);
        fft_1d(buf, inverse);
        for (int c = 0; c < s.width; ++c) s.at(r, c) = buf[c];
    }
    buf.resize(s.height);
    for (int c = 0; c < s.width; ++c) {
        for (int r = 0; r < s.height; ++r) buf[r] = s.at(r, c);
        fft_1d(buf, inverse);
        for (int r = 0; r < s.height; ++r) s.at(r, c) = buf[r];
    }
}

inline void require_finite_plane(const Mat& p, const char* op) {
    for (double v : p.v)
        if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite input");
}

}  // namespace detail

/// Unitary 2-D DFT (1/sqrt(HW) both ways).
inline Spectrum fft2(const Mat& plane) {
    if (plane.rows < 2 || plane.cols < 2) throw ShapeError("fft2: dimensions must be >= 2");
    detail::require_finite_plane(plane, "fft2");
    Spectrum s(plane.rows, plane.cols);
    for (std::size_t i = 0; i < plane.v.size(); ++i) s.data[i] = cplx(plane.v[i], 0.0);
    detail::fft2_axis(s, false);
    const double norm = 1.0 / std::sqrt(static_cast<double>(plane.rows) * plane.cols);
    for (cplx& z : s.data) z *= norm;
    return s;
}

inline Spectrum fft2_complex(const Spectrum& in, bool inverse) {
    Spectrum s = in;
    detail::fft2_axis(s, inverse);
    const double norm = 1.0 / std::sqrt(static_cast<double>(in.height) * in.width);
    for (cplx& z : s.data) z *= norm;
    return s;
}

/// Inverse of fft2. Imaginary residue beyond 1e-9 means the spectrum was not
/// conjugate-symmetric; the caller gets the real part either way.
inline Mat ifft2(const Spectrum& spec, double* max_imag = nullptr) {
    Spectrum s = fft2_complex(spec, true);
    Mat out(spec.height, spec.width);
    double worst = 0.0;
    for (std::size_t i = 0; i < s.data.size(); ++i) {
        out.v[i] = s.data[i].real();
        worst = std::max(worst, std::abs(s.data[i].imag()));
    }
    if (max_imag) *max_imag = worst;
    return out;
}

// ---------------------------------------------------------------- DCT

namespace detail {

inline const Mat& dct_basis(int n) {
    thread_local std::vector<Mat> cache;
    if (static_cast<int>(cache.size()) <= n) cache.resize(n + 1);
    Mat& m = cache[n];
    if (m.rows != n) {
        m = Mat(n, n);
        const double pi = 3.141592653589793238462643383279502884;
        for (int k = 0; k < n; ++k) {
            const double s = (k == 0) ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
            for (int j = 0; j < n; ++j) m.at(k, j) = s * std::cos(pi * (2 * j + 1) * k / (2.0 * n));
        }
    }
    return m;
}

}  // namespace detail

/// Orthonormal type-II 2-D DCT.
inline Mat dct2(const Mat& plane) {
    if (plane.rows < 2 || plane.cols < 2) throw ShapeError("dct2: dimensions must be >= 2");
    detail::require_finite_plane(plane, "dct2");
    const Mat& cr = detail::dct_basis(plane.rows);
    const Mat& cc = detail::dct_basis(plane.cols);
    return matmul(matmul(cr, plane), transpose(cc));
}

inline Mat idct2(const Mat& coef) {
    const Mat& cr = detail::dct_basis(coef.rows);
    const Mat& cc = detail::dct_basis(coef.cols);
    return matmul(matmul(transpose(cr), coef), cc);
}

// ---------------------------------------------------------------- Haar DWT

/// One resolution level of detail subbands.
struct HaarLevel {
    Mat lh, hl, hh;  // horizontal, vertical, diagonal detail
};

struct HaarPyramid {
    std::vector<HaarLevel> levels;  // finest first
    Mat ll;                         // coarsest approximation
};

namespace detail {

inline void haar_split(const Mat& in, Mat& ll, Mat& lh, Mat& hl, Mat& hh) {
    const int h2 = in.rows / 2, w2 = in.cols / 2;
    const double s = 0.5;  // two cascaded 1/sqrt(2) stages
    ll = Mat(h2, w2);
    lh = Mat(h2, w2);
    hl = Mat(h2, w2);
    hh = Mat(h2, w2);
    for (int r = 0; r < h2; ++r)
        for (int c = 0; c < w2; ++c) {
            const double a = in.at(2 * r, 2 * c), b = in.at(2 * r, 2 * c + 1);
            const double d = in.at(2 * r + 1, 2 * c), e = in.at(2 * r + 1, 2 * c + 1);
            ll.at(r, c) = s * (a + b + d + e);
            lh.at(r, c) = s * (a - b + d - e);
            hl.at(r, c) = s * (a + b - d - e);
            hh.at(r, c) = s * (a - b - d + e);
        }
}

inline Mat haar_merge(const Mat& ll, const Mat& lh, const Mat& hl, const Mat& hh) {
    Mat out(ll.rows * 2, ll.cols * 2);
    const double s = 0.5;
    for (int r = 0; r < ll.rows; ++r)
        for (int c = 0; c < ll.cols; ++c) {
            const double A = ll.at(r, c), B = lh.at(r, c), C = hl.at(r, c), D = hh.at(r, c);
            out.at(2 * r, 2 * c) = s * (A + B + C + D);
            out.at(2 * r, 2 * c + 1) = s * (A - B + C - D);
            out.at(2 * r + 1, 2 * c) = s * (A + B - C - D);
            out.at(2 * r + 1, 2 * c + 1) = s * (A - B - C + D);
        }
    return out;
}

}  // namespace detail

inline HaarPyramid dwt2_haar(const Mat& plane, int levels) {
    if (levels < 1) throw ConfigError("dwt2_haar: levels must be >= 1");
    const int div = 1 << levels;
    if (plane.rows % div != 0 || plane.cols % div != 0)
        throw ShapeError("dwt2_haar: dimensions not divisible by 2^levels");
    detail::require_finite_plane(plane, "dwt2_haar");
    HaarPyramid pyr;
    Mat cur = plane;
    for (int l = 0; l < levels; ++l) {
        HaarLevel lev;
        Mat ll;
        detail::haar_split(cur, ll, lev.lh, lev.hl, lev.hh);
        pyr.levels.push_back(std::move(lev));
        cur = std::move(ll);
    }
    pyr.ll = std::move(cur);
    return pyr;
}

inline Mat idwt2_haar(const HaarPyramid& pyr) {
    Mat cur = pyr.ll;
    for (auto it = pyr.levels.rbegin(); it != pyr.levels.rend(); ++it)
        cur = detail::haar_merge(cur, it->lh, it->hl, it->hh);
    return cur;
}

// ---------------------------------------------------------------- blocks

/// Row-major, non-overlapping tiles; remainder rows/cols excluded.
struct BlockPartition {
    int block_size = 4;
    int rows = 0, cols = 0;  // tile grid
    int count() const { return rows * cols; }
    std::pair<int, int> origin(int idx) const {
        return {(idx / cols) * block_size, (idx % cols) * block_size};
    }
};

inline BlockPartition make_blocks(int height, int width, int block_size = 4) {
    if (block_size < 1) throw ConfigError("make_blocks: block_size must be >= 1");
    BlockPartition p;
    p.block_size = block_size;
    p.rows = height / block_size;
    p.cols = width / block_size;
    return p;
}

inline Mat extract_block(const Mat& m, const BlockPartition& p, int idx) {
    auto [r0, c0] = p.origin(idx);
    Mat b(p.block_size, p.block_size);
    for (int r = 0; r < p.block_size; ++r)
        for (int c = 0; c < p.block_size; ++c) b.at(r, c) = m.at(r0 + r, c0 + c);
    return b;
}

inline void insert_block(Mat& m, const BlockPartition& p, int idx, const Mat& b) {
    auto [r0, c0] = p.origin(idx);
    for (int r = 0; r < p.block_size; ++r)
        for (int c = 0; c < p.block_size; ++c) m.at(r0 + r, c0 + c) = b.at(r, c);
}

// ---------------------------------------------------------------- SVD

struct Svd {
    Mat u;                  // m x n (thin)
    std::vector<double> s;  // descending, non-negative
    Mat v;                  // n x n
};

/// One-sided Jacobi SVD for small blocks (m >= n after internal transpose
/// handling is left to the caller; blocks here are square anyway).
inline Svd svd_block(const Mat& a) {
    if (a.rows < 2 || a.cols < 2) throw ShapeError("svd_block: size must be >= 2x2");
    detail::require_finite_plane(a, "svd_block");
    const int m = a.rows, n = a.cols;
    Mat u = a;
    Mat v(n, n);
    for (int i = 0; i < n; ++i) v.at(i, i) = 1.0;

    const double eps = 1e-14;
    for (int sweep = 0; sweep < 60; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n - 1; ++p)
            for (int q = p + 1; q < n; ++q) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (int r = 0; r < m; ++r) {
                    alpha += u.at(r, p) * u.at(r, p);
                    beta += u.at(r, q) * u.at(r, q);
                    gamma += u.at(r, p) * u.at(r, q);
                }
                if (std::abs(gamma) < 1e-280) continue;  // a column vanished; nothing to rotate
                off = std::max(off, std::abs(gamma) / std::max(std::sqrt(alpha * beta), 1e-300));
                if (std::abs(gamma) < eps * std::sqrt(alpha * beta)) continue;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double cs = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = cs * t;
                for (int r = 0; r < m; ++r) {
                    const double up = u.at(r, p), uq = u.at(r, q);
                    u.at(r, p) = cs * up - sn * uq;
                    u.at(r, q) = sn * up + cs * uq;
                }
                for (int r = 0; r < n; ++r) {
                    const double vp = v.at(r, p), vq = v.at(r, q);
                    v.at(r, p) = cs * vp - sn * vq;
                    v.at(r, q) = sn * vp + cs * vq;
                }
            }
        if (off < eps) break;
    }

    Svd out;
    out.s.resize(n);
    out.u = Mat(m, n);
    std::vector<int> order(n);
    for (int j = 0; j < n; ++j) {
        double norm = 0.0;
        for (int r = 0; r < m; ++r) norm += u.at(r, j) * u.at(r, j);
        out.s[j] = std::sqrt(norm);
        order[j] = j;
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](int x, int y) { return out.s[x] > out.s[y]; });
    std::vector<double> sorted(n);
    Mat usort(m, n), vsort(n, n);
    for (int j = 0; j < n; ++j) {
        const int src = order[j];
        sorted[j] = out.s[src];
        const double inv = out.s[src] > 1e-300 ? 1.0 / out.s[src] : 0.0;
        for (int r = 0; r < m; ++r) usort.at(r, j) = u.at(r, src) * inv;
        for (int r = 0; r < n; ++r) vsort.at(r, j) = v.at(r, src);
    }
    out.s = std::move(sorted);
    out.u = std::move(usort);
    out.v = std::move(vsort);
    return out;
}

inline Mat svd_reconstruct(const Svd& dec) {
    const int m = dec.u.rows, n = dec.v.rows, k = static_cast<int>(dec.s.size());
    Mat out(m, n);
    for (int j = 0; j < k; ++j)
        for (int r = 0; r < m; ++r) {
            const double us = dec.u.at(r, j) * dec.s[j];
            for (int c = 0; c < n; ++c) out.at(r, c) += us * dec.v.at(c, j);
        }
    return out;
}

}  // namespace shimforge::signal
