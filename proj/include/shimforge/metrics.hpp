#pragma once

// Detection and image-quality metrics plus ROC threshold calibration.

#include "shimforge/core.hpp"
#include "shimforge/linalg.hpp"
#include "shimforge/transforms.hpp"

namespace shimforge::metrics {

inline double bit_accuracy(const std::vector<uint8_t>& recovered, const std::vector<uint8_t>& key) {
    if (recovered.size() != key.size()) throw ShapeError("bit_accuracy: length mismatch");
    if (recovered.empty()) throw ShapeError("bit_accuracy: empty bit strings");
    std::size_t match = 0;
    for (std::size_t i = 0; i < key.size(); ++i)
        if ((recovered[i] != 0) == (key[i] != 0)) ++match;
    return static_cast<double>(match) / static_cast<double>(key.size());
}

/// Strictly more than 2/3 of the bits must match (22 of 32 passes, 21 fails).
inline bool acc_rule(double ba, int n_bits) {
    const long matched = std::lround(ba * n_bits);
    return 3 * matched > 2 * static_cast<long>(n_bits);
}

struct RocResult {
    double threshold = 0.0;
    double tpr = 0.0;
};

/// Threshold = smallest observed score (null or positive) whose empirical FPR
/// on the null set is <= fpr; detection is score >= threshold. Higher score =
/// more watermarked. With n nulls and k = floor(fpr*n) allowed false
/// positives, a score qualifies iff it exceeds the (k+1)-th largest null.
inline RocResult tpr_at_fpr(std::vector<double> null_scores,
                            const std::vector<double>& positive_scores, double fpr = 0.01) {
    if (null_scores.size() < 500)
        throw CalibrationError("tpr_at_fpr: null set must hold at least 500 scores");
    std::sort(null_scores.begin(), null_scores.end());
    const std::size_t n = null_scores.size();
    const auto allowed = static_cast<std::size_t>(std::floor(fpr * static_cast<double>(n)));
    const double cut = null_scores[n - allowed - 1];  // largest non-qualifying value

    double threshold = std::numeric_limits<double>::infinity();
    const auto above = std::upper_bound(null_scores.begin(), null_scores.end(), cut);
    if (above != null_scores.end()) threshold = *above;
    for (double s : positive_scores)
        if (s > cut && s < threshold) threshold = s;

    RocResult out;
    out.threshold = threshold;
    if (!positive_scores.empty()) {
        std::size_t hits = 0;
        for (double s : positive_scores)
            if (s >= threshold) ++hits;
        out.tpr = static_cast<double>(hits) / static_cast<double>(positive_scores.size());
    }
    return out;
}

inline double mse(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw ShapeError("mse: image shapes differ");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.data.size());
}

/// Peak 1.0; identical images report +inf.
inline double psnr(const Image& a, const Image& b) {
    const double m = mse(a, b);
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / m);
}

namespace detail {

inline const std::vector<double>& ssim_window() {
    // 7x7 Gaussian, sigma 1.5, normalized to sum 1.
    static const std::vector<double> w = [] {
        std::vector<double> k(49);
        double sum = 0.0;
        for (int r = 0; r < 7; ++r)
            for (int c = 0; c < 7; ++c) {
                const double dy = r - 3.0, dx = c - 3.0;
                k[r * 7 + c] = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
                sum += k[r * 7 + c];
            }
        for (double& v : k) v /= sum;
        return k;
    }();
    return w;
}

}  // namespace detail

/// Mean SSIM over all fully-interior 7x7 Gaussian windows of the luminance
/// planes. C1=(0.01)^2, C2=(0.03)^2 on unit dynamic range.
inline double ssim(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw ShapeError("ssim: image shapes differ");
    if (a.height < 7 || a.width < 7) throw ShapeError("ssim: image smaller than 7x7 window");
    const std::vector<double> ya = luminance(a), yb = luminance(b);
    const auto& w = detail::ssim_window();
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const int H = a.height, W = a.width;
    double acc = 0.0;
    int windows = 0;
    for (int r = 0; r + 7 <= H; ++r)
        for (int c = 0; c + 7 <= W; ++c) {
            double mx = 0.0, my = 0.0, xx = 0.0, yy = 0.0, xy = 0.0;
            for (int i = 0; i < 7; ++i)
                for (int j = 0; j < 7; ++j) {
                    const double wi = w[i * 7 + j];
                    const double xv = ya[(r + i) * W + (c + j)];
                    const double yv = yb[(r + i) * W + (c + j)];
                    mx += wi * xv;
                    my += wi * yv;
                    xx += wi * xv * xv;
                    yy += wi * yv * yv;
                    xy += wi * xv * yv;
                }
            const double vx = xx - mx * mx, vy = yy - my * my, cov = xy - mx * my;
            acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) /
                   ((mx * mx + my * my + c1) * (vx + vy + c2));
            ++windows;
        }
    return acc / windows;
}

namespace detail {

inline std::vector<double> dct_feature(const Image& img) {
    Mat y(img.height, img.width);
    y.v = luminance(img);
    const Mat d = signal::dct2(y);
    std::vector<double> f(64);
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) f[r * 8 + c] = d.at(r, c);
    return f;
}

}  // namespace detail

/// Frechet distance between Gaussian fits of 64-dim DCT features.
/// A stand-in quality statistic; only orderings are meaningful.
inline double frechet_dct(const std::vector<Image>& set_a, const std::vector<Image>& set_b) {
    if (set_a.size() < 32 || set_b.size() < 32)
        throw CalibrationError("frechet_dct: each set needs at least 32 images");
    const int d = 64;
    auto fit = [&](const std::vector<Image>& set, std::vector<double>& mu, Mat& cov) {
        std::vector<std::vector<double>> feats;
        feats.reserve(set.size());
        for (const Image& im : set) feats.push_back(detail::dct_feature(im));
        mu.assign(d, 0.0);
        for (const auto& f : feats)
            for (int i = 0; i < d; ++i) mu[i] += f[i];
        for (int i = 0; i < d; ++i) mu[i] /= static_cast<double>(feats.size());
        cov = Mat(d, d);
        for (const auto& f : feats)
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j) cov.at(i, j) += (f[i] - mu[i]) * (f[j] - mu[j]);
        const double inv = 1.0 / static_cast<double>(feats.size() - 1);
        for (double& v : cov.v) v *= inv;
    };
    std::vector<double> mu_a, mu_b;
    Mat ca, cb;
    fit(set_a, mu_a, ca);
    fit(set_b, mu_b, cb);

    double dmu = 0.0;
    for (int i = 0; i < d; ++i) {
        const double diff = mu_a[i] - mu_b[i];
        dmu += diff * diff;
    }
    const Mat ra = linalg::sqrtm_psd(ca);
    const Mat inner = matmul(matmul(ra, cb), ra);
    const Mat cross = linalg::sqrtm_psd(inner);
    const double fd = dmu + linalg::trace(ca) + linalg::trace(cb) - 2.0 * linalg::trace(cross);
    return fd > 0.0 ? fd : 0.0;
}

}  // namespace shimforge::metrics
