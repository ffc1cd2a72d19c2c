// Copyright (C) 2026 The UniParser Authors
// SPDX-License-Identifier: Apache-2.0

#include "uniparser/image_io.hpp"

#include <png.h>

#include <csetjmp>
#include <cstring>
#include <cstdio>
#include <memory>

#include "uniparser/error.hpp"

namespace uniparser {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void corrupt(const std::filesystem::path& path, const std::string& what) {
    throw Error(ErrorCode::DatasetCorrupt, path.string() + ": " + what);
}

void write_rows(const std::filesystem::path& path, int width, int height, int bit_depth, int color_type,
                const std::vector<png_bytep>& rows) {
    FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) corrupt(path, "cannot open for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        corrupt(path, "libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        corrupt(path, "libpng write error");
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    if (bit_depth == 16) png_set_swap(png);  // host little-endian → PNG big-endian
    png_write_image(png, const_cast<png_bytepp>(rows.data()));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

struct Decoded {
    int width = 0;
    int height = 0;
    int bit_depth = 0;
    int color_type = 0;
    std::vector<std::uint8_t> bytes;
};

Decoded read_raw(const std::filesystem::path& path) {
    FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) corrupt(path, "missing or unreadable");
    png_byte sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) corrupt(path, "not a PNG file");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        corrupt(path, "libpng initialisation failed");
    }
    Decoded out;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        corrupt(path, "truncated or malformed PNG data");
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    out.width = static_cast<int>(png_get_image_width(png, info));
    out.height = static_cast<int>(png_get_image_height(png, info));
    out.bit_depth = png_get_bit_depth(png, info);
    out.color_type = png_get_color_type(png, info);
    if (out.bit_depth == 16) png_set_swap(png);
    png_read_update_info(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    out.bytes.resize(rowbytes * static_cast<std::size_t>(out.height));
    std::vector<png_bytep> rows(static_cast<std::size_t>(out.height));
    for (int y = 0; y < out.height; ++y) rows[static_cast<std::size_t>(y)] = out.bytes.data() + rowbytes * y;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

}  // namespace

void write_png(const std::filesystem::path& path, const RgbImage& image) {
    std::vector<png_bytep> rows(static_cast<std::size_t>(image.height));
    auto* base = const_cast<std::uint8_t*>(image.pixels.data());
    for (int y = 0; y < image.height; ++y) rows[static_cast<std::size_t>(y)] = base + static_cast<std::size_t>(y) * image.width * 3;
    write_rows(path, image.width, image.height, 8, PNG_COLOR_TYPE_RGB, rows);
}

void write_png(const std::filesystem::path& path, const Gray16Image& image) {
    std::vector<png_bytep> rows(static_cast<std::size_t>(image.height));
    auto* base = reinterpret_cast<std::uint8_t*>(const_cast<std::uint16_t*>(image.pixels.data()));
    for (int y = 0; y < image.height; ++y) rows[static_cast<std::size_t>(y)] = base + static_cast<std::size_t>(y) * image.width * 2;
    write_rows(path, image.width, image.height, 16, PNG_COLOR_TYPE_GRAY, rows);
}

RgbImage read_png_rgb(const std::filesystem::path& path) {
    auto raw = read_raw(path);
    if (raw.bit_depth != 8 || raw.color_type != PNG_COLOR_TYPE_RGB) corrupt(path, "expected 8-bit RGB");
    return {raw.height, raw.width, std::move(raw.bytes)};
}

Gray16Image read_png_gray16(const std::filesystem::path& path) {
    auto raw = read_raw(path);
    if (raw.bit_depth != 16 || raw.color_type != PNG_COLOR_TYPE_GRAY) corrupt(path, "expected 16-bit grayscale");
    Gray16Image out{raw.height, raw.width, std::vector<std::uint16_t>(static_cast<std::size_t>(raw.width) * raw.height)};
    std::memcpy(out.pixels.data(), raw.bytes.data(), out.pixels.size() * 2);
    return out;
}

}  // namespace uniparser
