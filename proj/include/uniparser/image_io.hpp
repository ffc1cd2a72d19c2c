// Copyright (C) 2026 The UniParser Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace uniparser {

struct RgbImage {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> pixels;  // interleaved RGB, row-major

    bool operator==(const RgbImage&) const = default;
};

struct Gray16Image {
    int height = 0;
    int width = 0;
    std::vector<std::uint16_t> pixels;

    bool operator==(const Gray16Image&) const = default;
};

// PNG codecs. Readers throw DatasetCorrupt naming the path on any failure;
// writers throw DatasetCorrupt when the file cannot be created.
void write_png(const std::filesystem::path& path, const RgbImage& image);
void write_png(const std::filesystem::path& path, const Gray16Image& image);
RgbImage read_png_rgb(const std::filesystem::path& path);
Gray16Image read_png_gray16(const std::filesystem::path& path);

}  // namespace uniparser
