// Copyright (C) 2026 The UniParser Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "uniparser/datamodel.hpp"
#include "uniparser/image_io.hpp"

namespace uniparser {

/// Parameters of the synthetic "humanoid" dataset.
struct SynthSpec {
    int height = 64;
    int width = 64;
    int min_instances = 1;
    int max_instances = 3;
    int n_categories = 4;
    int min_instance_px = 64;
    bool overlap_allowed = false;
    std::uint64_t seed = 0;

    bool operator==(const SynthSpec&) const = default;
};

void validate(const SynthSpec& spec);

/// Deterministic in (spec, index). Instances that cannot be placed or end up
/// below `min_instance_px` visible pixels are omitted; the counts are kept
/// in metadata keys "placement_failures" and "dropped_instances".
ParsingSample generate_sample(const SynthSpec& spec, int index);

std::vector<ParsingSample> generate_dataset(const SynthSpec& spec, int count, int first_index = 0);

struct DatasetManifest {
    std::optional<SynthSpec> spec;
    std::vector<std::string> sample_ids;
};

/// Writes manifest.txt plus images/, instance/ and category/ PNGs.
DatasetManifest write_dataset(const std::vector<ParsingSample>& samples, const std::filesystem::path& dir,
                              const std::optional<SynthSpec>& spec = std::nullopt);

DatasetManifest read_manifest(const std::filesystem::path& dir);

/// Inverse of write_dataset. Throws DatasetCorrupt naming the offending file.
std::vector<ParsingSample> read_dataset(const std::filesystem::path& dir);

// Image tensor <-> 8-bit RGB conversion used by the dataset format.
RgbImage to_rgb8(const Tensor& image);
Tensor from_rgb8(const RgbImage& image);

}  // namespace uniparser
