#include <catch2/catch_amalgamated.hpp>

#include "shimforge/dataset.hpp"
#include "shimforge/metrics.hpp"

using namespace shimforge;
using namespace shimforge::metrics;

namespace {

std::vector<uint8_t> bits(std::initializer_list<int> v) {
    std::vector<uint8_t> out;
    for (int x : v) out.push_back(static_cast<uint8_t>(x));
    return out;
}

Image const_image(int h, int w, double v) { return Image(h, w, 3, v); }

double erf_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

TEST_CASE("bit accuracy counts matches") {
    std::vector<uint8_t> key(32, 1), same(32, 1), flipped(32, 0);
    CHECK(bit_accuracy(same, key) == 1.0);
    CHECK(bit_accuracy(flipped, key) == 0.0);
    std::vector<uint8_t> partial = key;
    for (int i = 0; i < 8; ++i) partial[i] = 0;  // 24 of 32 match
    CHECK(bit_accuracy(partial, key) == Catch::Approx(0.75));
    CHECK_THROWS_AS(bit_accuracy(bits({1, 0}), key), ShapeError);
}

TEST_CASE("acc rule is a strict two-thirds majority") {
    CHECK(acc_rule(22.0 / 32.0, 32));
    CHECK_FALSE(acc_rule(21.0 / 32.0, 32));
    CHECK(acc_rule(1.0, 32));
}

TEST_CASE("tpr_at_fpr needs 500 null scores") {
    std::vector<double> null_scores(499, 0.0), pos(10, 1.0);
    CHECK_THROWS_AS(tpr_at_fpr(null_scores, pos), CalibrationError);
}

TEST_CASE("tpr_at_fpr on exchangeable distributions sits near the FPR") {
    Rng rng(7);
    std::vector<double> nulls(2000), pos(2000);
    for (double& v : nulls) v = rng.normal();
    for (double& v : pos) v = rng.normal();
    const RocResult r = tpr_at_fpr(nulls, pos, 0.01);
    CHECK(r.tpr >= 0.0);
    CHECK(r.tpr <= 0.03);
}

TEST_CASE("tpr_at_fpr separates disjoint distributions completely") {
    std::vector<double> nulls(600), pos(100);
    for (std::size_t i = 0; i < nulls.size(); ++i) nulls[i] = static_cast<double>(i % 17);
    for (double& v : pos) v = 100.0;
    const RocResult r = tpr_at_fpr(nulls, pos, 0.01);
    CHECK(r.tpr == 1.0);
}

TEST_CASE("tpr_at_fpr matches the Gaussian closed form") {
    Rng rng(12345);
    std::vector<double> nulls(4000), pos(4000);
    for (double& v : nulls) v = rng.normal();
    for (double& v : pos) v = 3.0 + rng.normal();
    const RocResult r = tpr_at_fpr(nulls, pos, 0.01);
    const double z99 = 2.3263478740408408;  // Phi^-1(0.99)
    const double want = erf_cdf(3.0 - z99);
    CHECK(r.tpr == Catch::Approx(want).margin(0.05));
}

TEST_CASE("tpr_at_fpr threshold is monotone under larger null scores") {
    Rng rng(5);
    std::vector<double> nulls(800);
    for (double& v : nulls) v = rng.normal();
    std::vector<double> pos{0.0};
    const double t1 = tpr_at_fpr(nulls, pos).threshold;
    std::vector<double> bigger = nulls;
    for (int i = 0; i < 50; ++i) bigger.push_back(10.0 + i);
    const double t2 = tpr_at_fpr(bigger, pos).threshold;
    CHECK(t2 >= t1);
}

TEST_CASE("psnr closed forms") {
    const Image a = const_image(8, 8, 0.5);
    CHECK(std::isinf(psnr(a, a)));
    Image b = a;
    for (double& v : b.data) v += 0.1;
    CHECK(psnr(a, b) == Catch::Approx(20.0).margin(1e-9));
    Image c(4, 4, 3, 0.0);
    CHECK_THROWS_AS(psnr(a, c), ShapeError);
}

TEST_CASE("ssim maximum, luminance closed form, and inversion") {
    const Image a = const_image(9, 9, 0.25);
    CHECK(ssim(a, a) == Catch::Approx(1.0).margin(1e-12));

    // Constant planes: structure and contrast terms cancel, luminance remains.
    const Image b = const_image(9, 9, 0.75);
    const double c1 = 0.01 * 0.01;
    const double want = (2.0 * 0.25 * 0.75 + c1) / (0.25 * 0.25 + 0.75 * 0.75 + c1);
    CHECK(ssim(a, b) == Catch::Approx(want).margin(1e-12));

    // Binary image vs its negative: anti-correlated, recomputed directly.
    Image bin(8, 8, 1, 0.0);
    Rng rng(3);
    for (double& v : bin.data) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    Image neg = bin;
    for (double& v : neg.data) v = 1.0 - v;
    const double s = ssim(bin, neg);
    CHECK(s < 0.0);

    double acc = 0.0;
    int wins = 0;
    const double c2 = 0.03 * 0.03;
    std::vector<double> w(49);
    double wsum = 0.0;
    for (int r = 0; r < 7; ++r)
        for (int c = 0; c < 7; ++c) {
            w[r * 7 + c] = std::exp(-((r - 3.0) * (r - 3.0) + (c - 3.0) * (c - 3.0)) / 4.5);
            wsum += w[r * 7 + c];
        }
    for (double& v : w) v /= wsum;
    for (int r0 = 0; r0 + 7 <= 8; ++r0)
        for (int c0 = 0; c0 + 7 <= 8; ++c0) {
            double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
            for (int i = 0; i < 7; ++i)
                for (int j = 0; j < 7; ++j) {
                    const double wi = w[i * 7 + j];
                    const double xv = bin.at(0, r0 + i, c0 + j), yv = neg.at(0, r0 + i, c0 + j);
                    mx += wi * xv;
                    my += wi * yv;
                    xx += wi * xv * xv;
                    yy += wi * yv * yv;
                    xy += wi * xv * yv;
                }
            acc += ((2 * mx * my + c1) * (2 * (xy - mx * my) + c2)) /
                   ((mx * mx + my * my + c1) * ((xx - mx * mx) + (yy - my * my) + c2));
            ++wins;
        }
    CHECK(s == Catch::Approx(acc / wins).margin(1e-12));

    Image tiny(5, 5, 3, 0.0);
    CHECK_THROWS_AS(ssim(tiny, tiny), ShapeError);
}

TEST_CASE("frechet_dct identity, symmetry, and size guard") {
    std::vector<Image> a, b;
    for (int i = 0; i < 40; ++i) {
        a.push_back(dataset::make_scene(derive_seed(1, "fda", i)));
        b.push_back(dataset::make_scene(derive_seed(2, "fdb", i)));
    }
    CHECK(frechet_dct(a, a) == Catch::Approx(0.0).margin(1e-8));
    const double dab = frechet_dct(a, b);
    const double dba = frechet_dct(b, a);
    CHECK(dab == Catch::Approx(dba).margin(1e-8));
    CHECK(dab > 0.0);
    std::vector<Image> small(a.begin(), a.begin() + 10);
    CHECK_THROWS_AS(frechet_dct(small, b), CalibrationError);
}
