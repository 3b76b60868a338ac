#pragma once

// Three watermark schemes.
//
//  blocksvd  - 1-level Haar, 4x4 DCT blocks of each LL subband, largest
//              singular value quantized onto an even/odd lattice (one bit per
//              assigned block, blocks spread across channels).
//  spread    - each bit modulates a seeded +-1 carrier over its own set of
//              high-middle-frequency DCT coefficients of the luminance plane;
//              purely additive, detected by correlation sign.
//  treering  - ring-shaped masks in the Fourier plane of the initial latent
//              x_T, one complex constant per ring, detected after inversion.

#include "shimforge/sampler.hpp"
#include "shimforge/transforms.hpp"

#include <json.hpp>

namespace shimforge::watermark {

constexpr int kBits = 32;

struct BitKey {
    std::vector<uint8_t> bits;  // exactly 32 binary values
    std::uint64_t seed = 0;     // fully determines carriers / block assignment
    double strength = 0.0;

    void validate() const {
        if (bits.size() != kBits) throw ConfigError("BitKey: expected 32 bits");
        if (!(strength > 0.0) || !std::isfinite(strength))
            throw ConfigError("BitKey: strength must be positive");
    }
};

struct TreeRingKey {
    int channel = 0;                  // 0..2
    std::vector<int> radii = {3, 5, 7};
    std::uint64_t seed = 0;
    double amplitude = 2.0;

    /// Per-ring complex constants, regenerated from the seed.
    std::vector<std::complex<double>> targets() const {
        std::vector<std::complex<double>> out;
        out.reserve(radii.size());
        for (std::size_t j = 0; j < radii.size(); ++j) {
            Rng rng(derive_seed(seed, "ring", j));
            out.emplace_back(amplitude * rng.normal() / std::sqrt(2.0),
                             amplitude * rng.normal() / std::sqrt(2.0));
        }
        return out;
    }

    void validate(int plane_size) const {
        if (channel < 0 || channel > 2) throw ConfigError("TreeRingKey: channel must be 0..2");
        std::vector<int> sorted = radii;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
            throw ConfigError("TreeRingKey: radii must be distinct");
        for (int r : sorted)
            if (r < 1 || r >= plane_size / 2)
                throw ConfigError("TreeRingKey: radius outside (0, Nyquist)");
    }
};

struct DetectionScore {
    std::string scheme;
    double score = 0.0;  // higher = more watermarked
};

// ------------------------------------------------------------ key helpers

inline std::vector<uint8_t> random_bits(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "bits"));
    std::vector<uint8_t> b(kBits);
    for (auto& x : b) x = rng.uniform() < 0.5 ? 0 : 1;
    return b;
}

inline constexpr double kDefaultBlockSvdStrength = 0.20;
inline constexpr double kDefaultSpreadStrength = 0.022;

inline BitKey make_bitkey(std::uint64_t seed, double strength) {
    BitKey k;
    k.seed = seed;
    k.strength = strength;
    k.bits = random_bits(seed);
    return k;
}

inline std::string bits_to_hex(const std::vector<uint8_t>& bits) {
    std::string hex;
    for (int i = 0; i < kBits; i += 4) {
        int nib = 0;
        for (int j = 0; j < 4; ++j) nib = (nib << 1) | (bits[i + j] ? 1 : 0);
        hex.push_back("0123456789abcdef"[nib]);
    }
    return hex;
}

inline std::vector<uint8_t> bits_from_hex(const std::string& hex) {
    if (hex.size() != kBits / 4) throw ConfigError("key bits: expected 8 hex digits");
    std::vector<uint8_t> bits(kBits);
    for (int i = 0; i < static_cast<int>(hex.size()); ++i) {
        const char c = hex[i];
        int nib;
        if (c >= '0' && c <= '9')
            nib = c - '0';
        else if (c >= 'a' && c <= 'f')
            nib = c - 'a' + 10;
        else if (c >= 'A' && c <= 'F')
            nib = c - 'A' + 10;
        else
            throw ConfigError("key bits: invalid hex digit");
        for (int j = 0; j < 4; ++j) bits[i * 4 + j] = (nib >> (3 - j)) & 1;
    }
    return bits;
}

// ------------------------------------------------------------ blocksvd

namespace detail {

/// Deterministic Fisher-Yates from the key seed.
inline std::vector<int> seeded_permutation(int n, std::uint64_t seed, const char* tag) {
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i) p[i] = i;
    Rng rng(derive_seed(seed, tag));
    for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.uniform_int(0, i));
        std::swap(p[i], p[j]);
    }
    return p;
}

struct BlockRef {
    int channel;
    int block;
};

inline std::vector<BlockRef> blocksvd_assignment(const Image& img, const BitKey& key,
                                                 signal::BlockPartition& part) {
    if (img.height % 4 != 0 || img.width % 4 != 0)
        throw ShapeError("blocksvd: image sides must be divisible by 4");
    part = signal::make_blocks(img.height / 2, img.width / 2, 4);
    const int per_channel = part.count();
    const int capacity = per_channel * img.channels;
    if (capacity < kBits)
        throw CapacityError("blocksvd: image too small for " + std::to_string(kBits) + " blocks");
    const std::vector<int> perm = seeded_permutation(capacity, key.seed, "blocks");
    std::vector<BlockRef> refs(kBits);
    for (int i = 0; i < kBits; ++i)
        refs[i] = {perm[i] / per_channel, perm[i] % per_channel};
    return refs;
}

inline Mat channel_plane(const Image& img, int c) {
    Mat m(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) m.at(y, x) = img.at(c, y, x);
    return m;
}

inline void set_channel_plane(Image& img, int c, const Mat& m) {
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) img.at(c, y, x) = m.at(y, x);
}

}  // namespace detail

namespace detail {

inline Image embed_blocksvd_pass(const Image& img, const BitKey& key,
                                 const std::vector<BlockRef>& refs,
                                 const signal::BlockPartition& part) {
    const double q = key.strength;
    std::vector<signal::HaarPyramid> pyramids(img.channels);
    for (int c = 0; c < img.channels; ++c)
        pyramids[c] = signal::dwt2_haar(channel_plane(img, c), 1);

    for (int i = 0; i < kBits; ++i) {
        const auto [ch, blk] = refs[i];
        Mat block = signal::extract_block(pyramids[ch].ll, part, blk);
        Mat coef = signal::dct2(block);
        signal::Svd dec = signal::svd_block(coef);
        const double sigma1 = dec.s[0];
        const double sigma2 = dec.s.size() > 1 ? dec.s[1] : 0.0;
        const int want = key.bits[i] ? 1 : 0;
        long cell = static_cast<long>(std::floor(sigma1 / q));
        if (((cell % 2 + 2) % 2) != want) {
            const double f = sigma1 / q - static_cast<double>(cell);
            cell += (f <= 0.5) ? -1 : 1;
        }
        // Keep the embedded value the largest singular value with margin.
        while (cell < 0 || (cell + 0.5) * q <= sigma2 + 0.25 * q) cell += 2;
        dec.s[0] = (cell + 0.5) * q;
        signal::insert_block(pyramids[ch].ll, part, blk, signal::idct2(signal::svd_reconstruct(dec)));
    }

    Image out(img.height, img.width, img.channels);
    for (int c = 0; c < img.channels; ++c)
        set_channel_plane(out, c, signal::idwt2_haar(pyramids[c]));
    out.clamp();
    return out;
}

}  // namespace detail

inline std::pair<DetectionScore, std::vector<uint8_t>> detect_blocksvd(const Image& img,
                                                                       const BitKey& key);

/// Embeds, then re-embeds on the clamped result until the detector reads the
/// key back exactly (the [0,1] clamp can nudge a singular value across a cell
/// boundary on saturated regions).
inline Image embed_blocksvd(const Image& img, const BitKey& key) {
    key.validate();
    img.require_finite("embed_blocksvd");
    signal::BlockPartition part;
    const auto refs = detail::blocksvd_assignment(img, key, part);
    Image out = img;
    for (int pass = 0; pass < 5; ++pass) {
        out = detail::embed_blocksvd_pass(out, key, refs, part);
        if (detect_blocksvd(out, key).first.score == 1.0) break;
    }
    return out;
}

inline std::pair<DetectionScore, std::vector<uint8_t>> detect_blocksvd(const Image& img,
                                                                       const BitKey& key) {
    key.validate();
    img.require_finite("detect_blocksvd");
    signal::BlockPartition part;
    const auto refs = detail::blocksvd_assignment(img, key, part);
    const double q = key.strength;

    std::vector<signal::HaarPyramid> pyramids(img.channels);
    for (int c = 0; c < img.channels; ++c)
        pyramids[c] = signal::dwt2_haar(detail::channel_plane(img, c), 1);

    std::vector<uint8_t> bits(kBits);
    int match = 0;
    for (int i = 0; i < kBits; ++i) {
        const auto [ch, blk] = refs[i];
        const Mat coef = signal::dct2(signal::extract_block(pyramids[ch].ll, part, blk));
        const signal::Svd dec = signal::svd_block(coef);
        const long cell = static_cast<long>(std::floor(dec.s[0] / q));
        bits[i] = static_cast<uint8_t>(((cell % 2) + 2) % 2);
        if (bits[i] == (key.bits[i] ? 1 : 0)) ++match;
    }
    DetectionScore s{"blocksvd", static_cast<double>(match) / kBits};
    return {s, bits};
}

// ------------------------------------------------------------ spread

namespace detail {

struct SpreadCarrier {
    std::vector<int> coef;   // flat index into the DCT plane, kChipsPerBit per bit
    std::vector<double> sign;
};

constexpr int kChipsPerBit = 8;

inline SpreadCarrier spread_carrier(int h, int w, const BitKey& key) {
    // High diagonal band, away from the host's low-frequency energy and off
    // the axis lines where straight edges concentrate.
    std::vector<int> band;
    const int lo = 5 * (h + w) / 8, hi = h + w - 5;
    for (int u = 1; u < h; ++u)
        for (int v = 1; v < w; ++v)
            if (u + v >= lo && u + v <= hi) band.push_back(u * w + v);
    if (static_cast<int>(band.size()) < kBits * kChipsPerBit)
        throw CapacityError("spread: image too small for carrier band");
    const std::vector<int> perm = seeded_permutation(static_cast<int>(band.size()), key.seed, "chips");
    SpreadCarrier c;
    c.coef.resize(kBits * kChipsPerBit);
    for (int i = 0; i < kBits * kChipsPerBit; ++i) c.coef[i] = band[perm[i]];
    Rng rng(derive_seed(key.seed, "signs"));
    c.sign.resize(kBits * kChipsPerBit);
    for (auto& s : c.sign) s = rng.uniform() < 0.5 ? -1.0 : 1.0;
    return c;
}

}  // namespace detail

inline Image embed_spread(const Image& img, const BitKey& key) {
    key.validate();
    img.require_finite("embed_spread");
    const auto carrier = detail::spread_carrier(img.height, img.width, key);
    Mat delta(img.height, img.width);
    for (int i = 0; i < kBits; ++i) {
        const double mod = key.bits[i] ? key.strength : -key.strength;
        for (int j = 0; j < detail::kChipsPerBit; ++j) {
            const int k = i * detail::kChipsPerBit + j;
            delta.v[carrier.coef[k]] += mod * carrier.sign[k];
        }
    }
    const Mat pattern = signal::idct2(delta);
    Image out = img;
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) out.at(c, y, x) += pattern.at(y, x);
    out.clamp();
    return out;
}

inline std::pair<DetectionScore, std::vector<uint8_t>> detect_spread(const Image& img,
                                                                     const BitKey& key) {
    key.validate();
    img.require_finite("detect_spread");
    const auto carrier = detail::spread_carrier(img.height, img.width, key);
    Mat y(img.height, img.width);
    y.v = luminance(img);
    const Mat d = signal::dct2(y);
    std::vector<uint8_t> bits(kBits);
    int match = 0;
    for (int i = 0; i < kBits; ++i) {
        double corr = 0.0;
        for (int j = 0; j < detail::kChipsPerBit; ++j) {
            const int k = i * detail::kChipsPerBit + j;
            corr += d.v[carrier.coef[k]] * carrier.sign[k];
        }
        bits[i] = corr > 0.0 ? 1 : 0;
        if (bits[i] == (key.bits[i] ? 1 : 0)) ++match;
    }
    DetectionScore s{"spread", static_cast<double>(match) / kBits};
    return {s, bits};
}

// ------------------------------------------------------------ treering

namespace detail {

struct RingBin {
    int u, v;        // raw spectrum indices, unique owner of a conjugate pair
    int mirror_u, mirror_v;
    int ring;        // index into radii
    bool self;       // bin is its own mirror (value must be real)
};

inline std::vector<RingBin> ring_bins(int n, const std::vector<int>& radii) {
    std::vector<RingBin> bins;
    for (int u = 0; u < n; ++u)
        for (int v = 0; v < n; ++v) {
            const int fu = u <= n / 2 ? u : u - n;
            const int fv = v <= n / 2 ? v : v - n;
            const int r = static_cast<int>(std::lround(std::sqrt(static_cast<double>(fu) * fu +
                                                                 static_cast<double>(fv) * fv)));
            int ring = -1;
            for (std::size_t j = 0; j < radii.size(); ++j)
                if (radii[j] == r) ring = static_cast<int>(j);
            if (ring < 0) continue;
            const int mu = (n - u) % n, mv = (n - v) % n;
            if (std::make_pair(u, v) > std::make_pair(mu, mv)) continue;  // mirror handles it
            bins.push_back({u, v, mu, mv, ring, u == mu && v == mv});
        }
    return bins;
}

}  // namespace detail

/// Overwrite the masked Fourier bins of channel `key.channel` with the ring
/// targets (conjugate-symmetric) and return the spatially real result.
inline Tensor treering_write(const Tensor& x_T, const TreeRingKey& key) {
    const int n = x_T.shape[1];
    key.validate(n);
    const auto targets = key.targets();
    Mat plane(n, n);
    std::copy_n(x_T.data() + static_cast<std::size_t>(key.channel) * n * n, n * n, plane.v.begin());
    signal::Spectrum spec = signal::fft2(plane);
    for (const auto& b : detail::ring_bins(n, key.radii)) {
        const std::complex<double> c = targets[b.ring];
        if (b.self) {
            spec.at(b.u, b.v) = std::complex<double>(c.real(), 0.0);
        } else {
            spec.at(b.u, b.v) = c;
            spec.at(b.mirror_u, b.mirror_v) = std::conj(c);
        }
    }
    double imag = 0.0;
    const Mat back = signal::ifft2(spec, &imag);
    if (imag > 1e-9) throw NumericError("treering_write: broken conjugate symmetry");
    Tensor out = x_T;
    std::copy_n(back.v.begin(), n * n, out.data() + static_cast<std::size_t>(key.channel) * n * n);
    return out;
}

/// Mean L1 distance between the masked bins and the key targets (the detector
/// score is its negation, so higher = more watermarked).
inline double treering_distance(const Tensor& x_T, const TreeRingKey& key) {
    const int n = x_T.shape[1];
    key.validate(n);
    const auto targets = key.targets();
    Mat plane(n, n);
    std::copy_n(x_T.data() + static_cast<std::size_t>(key.channel) * n * n, n * n, plane.v.begin());
    const signal::Spectrum spec = signal::fft2(plane);
    double acc = 0.0;
    int count = 0;
    for (const auto& b : detail::ring_bins(n, key.radii)) {
        acc += std::abs(spec.at(b.u, b.v) - targets[b.ring]);
        ++count;
        if (!b.self) {
            acc += std::abs(spec.at(b.mirror_u, b.mirror_v) - std::conj(targets[b.ring]));
            ++count;
        }
    }
    return acc / count;
}

struct TreeRingSample {
    Image image;
    Tensor x_T;
};

inline TreeRingSample treering_generate(const TreeRingKey& key, const diffusion::DenoiserParams& p,
                                        const diffusion::NoiseSchedule& sched,
                                        const diffusion::TimeGrid& grid, std::uint64_t seed,
                                        diffusion::CallCounter* counter = nullptr) {
    Rng rng(derive_seed(seed, "treering-xt"));
    Tensor x_T = Tensor::randn({p.cfg.in_channels, p.cfg.image_size, p.cfg.image_size}, rng);
    x_T = treering_write(x_T, key);
    const Tensor x0 = diffusion::generate(p, sched, grid, x_T, p.null_ctx, counter);
    return {diffusion::decode(x0), std::move(x_T)};
}

inline DetectionScore treering_detect(const Image& img, const TreeRingKey& key,
                                      const diffusion::DenoiserParams& p,
                                      const diffusion::NoiseSchedule& sched,
                                      const diffusion::TimeGrid& grid,
                                      diffusion::CallCounter* counter = nullptr) {
    img.require_finite("treering_detect");
    const auto traj = diffusion::invert(p, sched, grid, diffusion::encode(img), p.null_ctx, counter);
    return {"treering", -treering_distance(traj.anchors.back(), key)};
}

// ------------------------------------------------------------ key files

inline nlohmann::json bitkey_to_json(const BitKey& key, const std::string& scheme) {
    return {{"scheme", scheme},
            {"seed", key.seed},
            {"bits", bits_to_hex(key.bits)},
            {"strength", key.strength}};
}

inline nlohmann::json treering_to_json(const TreeRingKey& key) {
    return {{"scheme", "treering"},
            {"seed", key.seed},
            {"radii", key.radii},
            {"channel", key.channel},
            {"strength", key.amplitude}};
}

struct AnyKey {
    std::string scheme;  // "blocksvd", "spread", or "treering"
    BitKey bit;
    TreeRingKey ring;
};

inline AnyKey key_from_json(const nlohmann::json& j) {
    AnyKey k;
    k.scheme = j.at("scheme").get<std::string>();
    if (k.scheme == "treering") {
        k.ring.seed = j.at("seed").get<std::uint64_t>();
        k.ring.radii = j.at("radii").get<std::vector<int>>();
        k.ring.channel = j.at("channel").get<int>();
        k.ring.amplitude = j.at("strength").get<double>();
    } else if (k.scheme == "blocksvd" || k.scheme == "spread") {
        k.bit.seed = j.at("seed").get<std::uint64_t>();
        k.bit.bits = bits_from_hex(j.at("bits").get<std::string>());
        k.bit.strength = j.at("strength").get<double>();
    } else {
        throw ConfigError("unknown watermark scheme: " + k.scheme);
    }
    return k;
}

}  // namespace shimforge::watermark
