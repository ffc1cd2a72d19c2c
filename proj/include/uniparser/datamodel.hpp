// Copyright (C) 2026 The UniParser Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "uniparser/tensor.hpp"

namespace uniparser {

/// Image plus dense instance and part-category labels. Id 0 is background in
/// both maps.
struct ParsingSample {
    Tensor image;  // 3×H×W in [0, 1]
    LabelMap instance_map;
    LabelMap category_map;
    std::string sample_id;
    std::map<std::string, std::string> metadata;

    int height() const { return instance_map.height; }
    int width() const { return instance_map.width; }
    int num_instances() const;

    bool operator==(const ParsingSample&) const = default;
};

/// Throws InconsistentLabels when the label maps disagree on foreground or
/// instance ids are not contiguous from 1.
void validate(const ParsingSample& sample);

struct PointF {
    double row = 0.0;
    double col = 0.0;
};

struct BoxI {
    int top = 0;
    int left = 0;
    int height = 0;
    int width = 0;
};

struct InstanceGT {
    int instance_id = 0;
    Mask mask;
    PointF barycenter;
    BoxI bbox;
    std::map<int, Mask> part_masks;
};

struct FeatureMap {
    Tensor data;  // C×H×W
    int stride = 1;

    int channels() const { return data.dim(0); }
    int height() const { return data.dim(1); }
    int width() const { return data.dim(2); }
};

struct CenterHeatmap {
    Tensor data;  // 1×S×S
    int grid = 0;

    double at(int row, int col) const { return data.at(0, row, col); }
};

struct GridCoord {
    int row = 0;
    int col = 0;
    bool operator==(const GridCoord&) const = default;
    auto operator<=>(const GridCoord&) const = default;
};

enum class KernelOrigin { Instance, Category };

struct KernelBank {
    Tensor vectors;  // K×C
    KernelOrigin origin = KernelOrigin::Instance;
    std::vector<GridCoord> coords;  // instance kernels only
    std::vector<double> scores;     // center confidence per instance kernel

    int size() const { return vectors.empty() ? 0 : vectors.dim(0); }
};

enum class SimilarityKind { Instance, Category, Parsing };

struct SimilarityStack {
    Tensor maps;  // K×H×W
    SimilarityKind kind = SimilarityKind::Instance;
    int num_categories = 0;  // parsing stacks: row = instance · num_categories + (category − 1)

    int size() const { return maps.empty() ? 0 : maps.dim(0); }
};

struct InstancePrediction {
    double score = 0.0;
    std::map<int, Mask> part_masks;

    Mask union_mask() const;
};

struct ParsingPrediction {
    int height = 0;
    int width = 0;
    std::vector<InstancePrediction> instances;
};

enum class SimilaritySpace { Cosine, Inner, InnerSigmoidAfter, InnerSigmoidBefore };
enum class FusionMode { Index, Convs, Multi };

struct HyperParams {
    int grid_size = 40;
    double sigma_center = 0.2;
    double theta_c = 0.1;
    double theta_ctr = 0.1;
    double theta_masks = 0.5;
    double lambda_aux = 3.0;
    double lambda_par = 3.0;
    double lambda_metric = 1.0;
    int head_channels = 128;
    int head_depth = 5;
    double kernel_init_std = 0.01;
    SimilaritySpace similarity_space = SimilaritySpace::Cosine;
    FusionMode fusion_mode = FusionMode::Index;
    // Ablation switches for the two halves of the auxiliary loss.
    bool aux_instance = true;
    bool aux_category = true;
};

void validate(const HyperParams& hp);

std::string to_string(SimilaritySpace s);
std::string to_string(FusionMode f);
SimilaritySpace parse_similarity_space(const std::string& s);
FusionMode parse_fusion_mode(const std::string& s);

/// Mean (row, col) of the set pixels. Throws EmptyMask.
PointF barycenter(const Mask& mask);

/// Tight bounding box of the set pixels; zero-size box for an empty mask.
BoxI bounding_box(const Mask& mask);

/// One InstanceGT per instance id, in id order. Throws InconsistentLabels.
std::vector<InstanceGT> instance_part_masks(const ParsingSample& sample);

/// Rebuilds (instance_map, category_map) by overlaying part masks.
std::pair<LabelMap, LabelMap> overlay_labels(const std::vector<InstanceGT>& instances, int height, int width);

/// Centre of grid cell (row, col) in image pixel coordinates.
PointF cell_center(int row, int col, int grid, int image_h, int image_w);

/// Grid cells marked positive for one instance: cells whose centre lies in
/// the σ-scaled box around the barycentre, or the nearest cell when none do.
std::vector<GridCoord> center_region(const InstanceGT& inst, int grid, double sigma, int image_h, int image_w);

/// Binary S×S target heatmap; overlapping regions resolve to 1.
CenterHeatmap center_heatmap_gt(const std::vector<InstanceGT>& instances, int grid, double sigma, int image_h,
                                int image_w);

/// Nearest-neighbour resample of a mask to another resolution using cell centres.
Mask resize_nearest(const Mask& mask, int out_h, int out_w);

}  // namespace uniparser
