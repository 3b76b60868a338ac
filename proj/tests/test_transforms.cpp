#include <catch2/catch_amalgamated.hpp>

#include "shimforge/linalg.hpp"
#include "shimforge/transforms.hpp"

using namespace shimforge;
using namespace shimforge::signal;

namespace {

Mat random_plane(int h, int w, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    Mat m(h, w);
    for (double& v : m.v) v = lo + (hi - lo) * rng.uniform();
    return m;
}

// Direct O(N^2) unitary DFT, the independent reference for fft2.
Spectrum dft2_reference(const Mat& p) {
    const int h = p.rows, w = p.cols;
    Spectrum out(h, w);
    const double pi = 3.141592653589793238462643383279502884;
    for (int ku = 0; ku < h; ++ku)
        for (int kv = 0; kv < w; ++kv) {
            std::complex<double> acc(0.0, 0.0);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const double ang = -2.0 * pi * (double(ku) * y / h + double(kv) * x / w);
                    acc += p.at(y, x) * std::complex<double>(std::cos(ang), std::sin(ang));
                }
            out.at(ku, kv) = acc / std::sqrt(double(h) * w);
        }
    return out;
}

double spectrum_energy(const Spectrum& s) {
    double e = 0.0;
    for (const auto& z : s.data) e += std::norm(z);
    return e;
}

double plane_energy(const Mat& m) {
    double e = 0.0;
    for (double v : m.v) e += v * v;
    return e;
}

}  // namespace

TEST_CASE("fft2 constant plane concentrates in DC") {
    Mat p(8, 8, 0.37);
    const Spectrum s = fft2(p);
    CHECK(std::abs(s.at(0, 0) - std::complex<double>(0.37 * 8.0, 0.0)) < 1e-12);
    for (int u = 0; u < 8; ++u)
        for (int v = 0; v < 8; ++v)
            if (u || v) CHECK(std::abs(s.at(u, v)) < 1e-12);
}

TEST_CASE("fft2 impulse has flat magnitude") {
    Mat p(4, 4);
    p.at(0, 0) = 1.0;
    const Spectrum s = fft2(p);
    for (const auto& z : s.data) CHECK(std::abs(z) == Catch::Approx(0.25).margin(1e-12));
}

TEST_CASE("fft2 matches the direct DFT and conserves energy") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const Mat p = random_plane(8, 8, seed);
        const Spectrum fast = fft2(p);
        const Spectrum ref = dft2_reference(p);
        for (std::size_t i = 0; i < fast.data.size(); ++i)
            CHECK(std::abs(fast.data[i] - ref.data[i]) < 1e-10);
        CHECK(spectrum_energy(fast) == Catch::Approx(plane_energy(p)).epsilon(1e-9));
    }
}

TEST_CASE("fft2 handles non-power-of-two sizes") {
    const Mat p = random_plane(6, 10, 77);
    const Spectrum fast = fft2(p);
    const Spectrum ref = dft2_reference(p);
    for (std::size_t i = 0; i < fast.data.size(); ++i)
        CHECK(std::abs(fast.data[i] - ref.data[i]) < 1e-10);
    double imag = 0.0;
    const Mat back = ifft2(fast, &imag);
    CHECK(imag < 1e-9);
    for (std::size_t i = 0; i < p.v.size(); ++i) CHECK(std::abs(back.v[i] - p.v[i]) < 1e-9);
}

TEST_CASE("fft2 round trip and real-input symmetry") {
    const Mat p = random_plane(16, 16, 4);
    double imag = 0.0;
    const Mat back = ifft2(fft2(p), &imag);
    CHECK(imag < 1e-9);
    for (std::size_t i = 0; i < p.v.size(); ++i) CHECK(std::abs(back.v[i] - p.v[i]) < 1e-9);
}

TEST_CASE("fft2 rejects bad input") {
    Mat tiny(1, 5, 0.0);
    CHECK_THROWS_AS(fft2(tiny), ShapeError);
    Mat bad(4, 4, 0.0);
    bad.at(1, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(fft2(bad), NumericError);
}

TEST_CASE("dct2 constant plane puts everything in DC") {
    Mat p(4, 4, 0.5);
    const Mat d = dct2(p);
    CHECK(d.at(0, 0) == Catch::Approx(4.0 * 0.5).margin(1e-12));
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c)
            if (r || c) CHECK(std::abs(d.at(r, c)) < 1e-12);
}

TEST_CASE("dct2 matches the explicit 2x2 orthonormal basis product") {
    Mat p(2, 2);
    p.at(0, 0) = 0.3;
    p.at(0, 1) = -0.7;
    p.at(1, 0) = 1.1;
    p.at(1, 1) = 0.25;
    // C2 = [[1/sqrt2, 1/sqrt2], [cos(pi/4), -cos(pi/4)]] (orthonormal type-II)
    const double s = 1.0 / std::sqrt(2.0);
    Mat c2(2, 2);
    c2.at(0, 0) = s;
    c2.at(0, 1) = s;
    c2.at(1, 0) = std::sqrt(2.0 / 2.0) * std::cos(3.141592653589793 / 4.0);
    c2.at(1, 1) = std::sqrt(2.0 / 2.0) * std::cos(3.0 * 3.141592653589793 / 4.0);
    const Mat want = matmul(matmul(c2, p), transpose(c2));
    const Mat got = dct2(p);
    for (std::size_t i = 0; i < want.v.size(); ++i) CHECK(got.v[i] == Catch::Approx(want.v[i]).margin(1e-12));
}

TEST_CASE("dct2 round trip and Parseval") {
    const Mat p = random_plane(8, 8, 11);
    const Mat d = dct2(p);
    const Mat back = idct2(d);
    for (std::size_t i = 0; i < p.v.size(); ++i) CHECK(std::abs(back.v[i] - p.v[i]) < 1e-9);
    CHECK(plane_energy(d) == Catch::Approx(plane_energy(p)).epsilon(1e-9));
}

TEST_CASE("haar constant plane has zero detail") {
    Mat p(8, 8, 0.25);
    const HaarPyramid pyr = dwt2_haar(p, 2);
    for (const auto& lev : pyr.levels)
        for (const Mat* band : {&lev.lh, &lev.hl, &lev.hh})
            for (double v : band->v) CHECK(std::abs(v) < 1e-12);
    for (double v : pyr.ll.v) CHECK(v == Catch::Approx(4.0 * 0.25).margin(1e-12));  // 2^levels scaling
}

TEST_CASE("haar checkerboard lands in HH") {
    Mat p(4, 4);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) p.at(r, c) = ((r + c) % 2 == 0) ? 1.0 : -1.0;
    const HaarPyramid pyr = dwt2_haar(p, 1);
    // Hand-applied 2x2 kernel: each block (+1,-1;-1,+1) gives hh = +-2, rest 0.
    for (double v : pyr.ll.v) CHECK(std::abs(v) < 1e-12);
    for (double v : pyr.levels[0].lh.v) CHECK(std::abs(v) < 1e-12);
    for (double v : pyr.levels[0].hl.v) CHECK(std::abs(v) < 1e-12);
    for (double v : pyr.levels[0].hh.v) CHECK(std::abs(std::abs(v) - 2.0) < 1e-12);
}

TEST_CASE("haar round trip, energy, and shape guard") {
    const Mat p = random_plane(16, 16, 5);
    const HaarPyramid pyr = dwt2_haar(p, 1);
    const Mat back = idwt2_haar(pyr);
    for (std::size_t i = 0; i < p.v.size(); ++i) CHECK(std::abs(back.v[i] - p.v[i]) < 1e-9);
    double e = plane_energy(pyr.ll);
    e += plane_energy(pyr.levels[0].lh) + plane_energy(pyr.levels[0].hl) + plane_energy(pyr.levels[0].hh);
    CHECK(e == Catch::Approx(plane_energy(p)).epsilon(1e-9));
    Mat odd(6, 6, 0.0);
    CHECK_THROWS_AS(dwt2_haar(odd, 2), ShapeError);  // 6 not divisible by 4
}

TEST_CASE("svd identity and rank-1 cases") {
    Mat eye(2, 2);
    eye.at(0, 0) = eye.at(1, 1) = 1.0;
    const Svd dec = svd_block(eye);
    CHECK(dec.s[0] == Catch::Approx(1.0).margin(1e-12));
    CHECK(dec.s[1] == Catch::Approx(1.0).margin(1e-12));

    Mat outer(3, 3);
    const double u[3] = {1.0, -2.0, 0.5}, v[3] = {0.3, 0.7, -1.1};
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) outer.at(r, c) = u[r] * v[c];
    const Svd d2 = svd_block(outer);
    CHECK(d2.s[1] < 1e-10);
}

TEST_CASE("svd reconstructs and matches the AtA eigenvalue oracle") {
    for (std::uint64_t seed : {21u, 22u, 23u}) {
        const Mat a = random_plane(4, 4, seed);
        const Svd dec = svd_block(a);
        for (std::size_t i = 1; i < dec.s.size(); ++i) {
            CHECK(dec.s[i] >= 0.0);
            CHECK(dec.s[i] <= dec.s[i - 1] + 1e-12);
        }
        const Mat rec = svd_reconstruct(dec);
        for (std::size_t i = 0; i < a.v.size(); ++i) CHECK(std::abs(rec.v[i] - a.v[i]) < 1e-8);

        // Independent route: singular values are sqrt eigenvalues of A^T A.
        const Mat ata = matmul(transpose(a), a);
        std::vector<double> ev;
        Mat vecs;
        linalg::jacobi_eigen_sym(ata, ev, vecs);
        std::sort(ev.begin(), ev.end(), std::greater<>());
        for (std::size_t i = 0; i < ev.size(); ++i)
            CHECK(std::sqrt(std::max(0.0, ev[i])) == Catch::Approx(dec.s[i]).margin(1e-8));
    }
}

TEST_CASE("transforms are bitwise deterministic") {
    const Mat p = random_plane(8, 8, 99);
    const Spectrum s1 = fft2(p), s2 = fft2(p);
    CHECK(std::memcmp(s1.data.data(), s2.data.data(), s1.data.size() * sizeof(cplx)) == 0);
    const Mat d1 = dct2(p), d2 = dct2(p);
    CHECK(d1.v == d2.v);
    const Svd sv1 = svd_block(p), sv2 = svd_block(p);
    CHECK(sv1.s == sv2.s);
    CHECK(sv1.u.v == sv2.u.v);
}

TEST_CASE("block partition excludes remainders and orders row-major") {
    const BlockPartition part = make_blocks(10, 13, 4);
    CHECK(part.rows == 2);
    CHECK(part.cols == 3);
    CHECK(part.count() == 6);
    CHECK(part.origin(0) == std::pair<int, int>{0, 0});
    CHECK(part.origin(4) == std::pair<int, int>{4, 4});
}
