#pragma once

// 8-bit PNG input/output. Quantization to bytes happens exactly here (and in
// quantize_u8, which the benchmark uses to model a save/load round trip).

#include <csetjmp>
#include <cstdio>
#include <filesystem>

#include <png.h>

#include "shimforge/core.hpp"

namespace shimforge::io {

inline double from_u8(unsigned char b) { return static_cast<double>(b) / 255.0; }

inline unsigned char to_u8(double v) {
    const double q = std::lround(clamp01(v) * 255.0);
    return static_cast<unsigned char>(q);
}

/// The image as it would look after an 8-bit save/load round trip.
inline Image quantize_u8(const Image& img) {
    Image out = img;
    for (double& v : out.data) v = from_u8(to_u8(v));
    return out;
}

inline void write_png(const std::string& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3) throw ShapeError("write_png: 1 or 3 channels");
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw IoError("cannot open for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        std::fclose(fp);
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("libpng write failed: " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, img.width, img.height, 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<unsigned char> row(static_cast<std::size_t>(img.width) * img.channels);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c)
                row[static_cast<std::size_t>(x) * img.channels + c] = to_u8(img.at(c, y, x));
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

inline Image read_png(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw IoError("cannot open: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        std::fclose(fp);
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError("libpng read failed: " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    png_set_expand(png);         // palette/low-depth to 8-bit
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int ch = png_get_channels(png, info);
    if (ch != 1 && ch != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError("unsupported PNG channel count: " + path);
    }
    Image img(h, w, ch);
    std::vector<unsigned char> row(static_cast<std::size_t>(w) * ch);
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < ch; ++c)
                img.at(c, y, x) = from_u8(row[static_cast<std::size_t>(x) * ch + c]);
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

/// Outputs are write-once; existing files are a collision unless forced.
inline void require_fresh(const std::string& path, bool force) {
    if (!force && std::filesystem::exists(path))
        throw IoError("output already exists (use --force to overwrite): " + path);
}

}  // namespace shimforge::io
