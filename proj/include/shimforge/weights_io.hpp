#pragma once

// Weights file: magic "SHIMFORGE-W1", a manifest of named arrays with shapes,
// then row-major little-endian float64 payloads, then a CRC32 footer over
// everything before it. Save and load round-trip bit-exactly.

#include <cstdio>
#include <fstream>

#include <zlib.h>

#include "shimforge/denoiser.hpp"

namespace shimforge::diffusion {

namespace detail {

inline void put_u8(std::string& buf, std::uint8_t v) { buf.push_back(static_cast<char>(v)); }

inline void put_u16(std::string& buf, std::uint16_t v) {
    for (int i = 0; i < 2; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& buf, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    put_u64(buf, bits);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw IoError("weights file truncated");
    }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(buf[pos++]);
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = 0;
        for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
        return v;
    }
    double f64() {
        const std::uint64_t bits = u64();
        double d;
        std::memcpy(&d, &bits, 8);
        return d;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace detail

inline constexpr char kWeightsMagic[] = "SHIMFORGE-W1";

inline void save_weights(const std::string& path, const DenoiserParams& params) {
    std::vector<std::pair<std::string, const Tensor*>> arrays = params.named();
    Tensor arch({9});
    arch.v = {static_cast<double>(params.cfg.in_channels), static_cast<double>(params.cfg.image_size),
              static_cast<double>(params.cfg.c1),          static_cast<double>(params.cfg.c2),
              static_cast<double>(params.cfg.c3),          static_cast<double>(params.cfg.ctx_tokens),
              static_cast<double>(params.cfg.ctx_dim),     static_cast<double>(params.cfg.temb_dim),
              static_cast<double>(params.cfg.T)};
    Tensor step({1});
    step.v = {static_cast<double>(params.train_step)};
    arrays.emplace_back("meta.arch", &arch);
    arrays.emplace_back("meta.train_step", &step);

    std::string buf;
    buf.append(kWeightsMagic, 12);
    detail::put_u32(buf, static_cast<std::uint32_t>(arrays.size()));
    for (auto& [name, t] : arrays) {
        detail::put_u16(buf, static_cast<std::uint16_t>(name.size()));
        buf.append(name);
        detail::put_u8(buf, static_cast<std::uint8_t>(t->shape.size()));
        for (int d : t->shape) detail::put_u32(buf, static_cast<std::uint32_t>(d));
    }
    for (auto& [name, t] : arrays)
        for (double v : t->v) detail::put_f64(buf, v);

    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size())));
    detail::put_u32(buf, crc);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open weights file for writing: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("short write to weights file: " + path);
}

inline DenoiserParams load_weights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open weights file: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 16 || buf.compare(0, 12, kWeightsMagic) != 0)
        throw IoError("not a weights file (bad magic): " + path);

    const std::string body = buf.substr(0, buf.size() - 4);
    detail::Reader footer{buf};
    footer.pos = buf.size() - 4;
    const std::uint32_t want = footer.u32();
    const auto got = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size())));
    if (want != got) throw IoError("weights file checksum mismatch: " + path);

    detail::Reader r{body};
    r.pos = 12;
    const std::uint32_t count = r.u32();
    std::vector<std::pair<std::string, std::vector<int>>> manifest(count);
    for (auto& [name, shape] : manifest) {
        name = r.str(r.u16());
        const int ndim = r.u8();
        shape.resize(ndim);
        for (int i = 0; i < ndim; ++i) shape[i] = static_cast<int>(r.u32());
    }
    std::vector<Tensor> tensors;
    tensors.reserve(count);
    for (auto& [name, shape] : manifest) {
        Tensor t(shape);
        for (double& v : t.v) v = r.f64();
        tensors.push_back(std::move(t));
    }

    auto find = [&](const std::string& name) -> Tensor& {
        for (std::uint32_t i = 0; i < count; ++i)
            if (manifest[i].first == name) return tensors[i];
        throw IoError("weights file missing array: " + name);
    };

    const Tensor& arch = find("meta.arch");
    DenoiserConfig cfg;
    cfg.in_channels = static_cast<int>(arch.v[0]);
    cfg.image_size = static_cast<int>(arch.v[1]);
    cfg.c1 = static_cast<int>(arch.v[2]);
    cfg.c2 = static_cast<int>(arch.v[3]);
    cfg.c3 = static_cast<int>(arch.v[4]);
    cfg.ctx_tokens = static_cast<int>(arch.v[5]);
    cfg.ctx_dim = static_cast<int>(arch.v[6]);
    cfg.temb_dim = static_cast<int>(arch.v[7]);
    cfg.T = static_cast<int>(arch.v[8]);

    DenoiserParams p;
    p.cfg = cfg;
    p.train_step = static_cast<long>(find("meta.train_step").v[0]);
    for (auto& [name, dst] : p.named()) *dst = find(name);
    p.require_finite();
    return p;
}

}  // namespace shimforge::diffusion
