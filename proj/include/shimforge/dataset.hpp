#pragma once

// Procedural 32x32 RGB scenes: a linear gradient background with 2-4 soft-edge
// rectangles and ellipses. Every image is a pure function of its seed, so the
// set regenerates identically in any order.

#include "shimforge/core.hpp"

namespace shimforge::dataset {

inline Image make_scene(std::uint64_t seed, int size = 32) {
    Rng rng(seed);
    Image img(size, size, 3);

    double bg0[3], bg1[3];
    for (int c = 0; c < 3; ++c) {
        bg0[c] = rng.uniform();
        bg1[c] = rng.uniform();
    }
    const double ang = rng.uniform() * 2.0 * 3.141592653589793238462643383279502884;
    const double gx = std::cos(ang), gy = std::sin(ang);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double u = ((x + 0.5) / size - 0.5) * gx + ((y + 0.5) / size - 0.5) * gy + 0.5;
            const double w = clamp01(u);
            for (int c = 0; c < 3; ++c) img.at(c, y, x) = bg0[c] + (bg1[c] - bg0[c]) * w;
        }

    const int shapes = static_cast<int>(rng.uniform_int(2, 4));
    for (int s = 0; s < shapes; ++s) {
        const bool ellipse = rng.uniform() < 0.5;
        double col[3];
        for (int c = 0; c < 3; ++c) col[c] = rng.uniform();
        const double cx = rng.uniform() * size;
        const double cy = rng.uniform() * size;
        const double rx = 2.0 + rng.uniform() * (size * 0.28);
        const double ry = 2.0 + rng.uniform() * (size * 0.28);
        const double feather = 2.0;  // soft edges keep the top DCT band quiet
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                double cov;  // coverage in [0,1]
                if (ellipse) {
                    const double d = std::sqrt(((x + 0.5 - cx) / rx) * ((x + 0.5 - cx) / rx) +
                                               ((y + 0.5 - cy) / ry) * ((y + 0.5 - cy) / ry));
                    cov = clamp01((1.0 - d) * std::min(rx, ry) / feather + 0.5);
                } else {
                    const double dx = rx - std::abs(x + 0.5 - cx);
                    const double dy = ry - std::abs(y + 0.5 - cy);
                    cov = clamp01(std::min(dx, dy) / feather + 0.5);
                }
                if (cov <= 0.0) continue;
                for (int c = 0; c < 3; ++c)
                    img.at(c, y, x) = img.at(c, y, x) * (1.0 - cov) + col[c] * cov;
            }
    }
    img.clamp();
    return img;
}

inline std::vector<Image> gen_dataset(int n, std::uint64_t seed, int size = 32) {
    std::vector<Image> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) out.push_back(make_scene(derive_seed(seed, "image", i), size));
    return out;
}

}  // namespace shimforge::dataset
