// Copyright (C) 2026 The UniParser Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <vector>

#include "uniparser/datamodel.hpp"
#include "uniparser/layers.hpp"

namespace uniparser {

/// Resize to S×S, add coordinates, tower, 1×1 conv, sigmoid. Output 1×S×S.
class CenterLocator {
public:
    CenterLocator(int in_channels, int channels, int depth, nn::Initializer& init);

    nn::Var operator()(const nn::Var& f_neck, int grid) const;
    void collect(nn::ParamList& out) const;

private:
    nn::Tower tower_;
    nn::Conv2d predict_;
};

/// Tower over F_neck at full resolution followed by the similarity-space
/// feature transform. Used for both the instance (with coordinates) and
/// the category (without) feature spaces.
class FeatureSpaceBuilder {
public:
    FeatureSpaceBuilder(int in_channels, int channels, int depth, bool with_coords, nn::Initializer& init);

    nn::Var operator()(const nn::Var& f_neck, SimilaritySpace space) const;
    void collect(const std::string& prefix, nn::ParamList& out) const;

private:
    nn::Tower tower_;
    bool with_coords_;
};

/// Feature (or kernel) transform applied before the dot product: L2
/// normalization for cosine, sigmoid for inner_sigmoid_before, identity
/// otherwise. `rows` selects K×C kernels rather than C×H×W maps.
nn::Var embed(const nn::Var& x, SimilaritySpace space, bool rows);

/// Dot products of kernels (K×C) with every pixel of f (C×H×W) → K×(H·W),
/// post-processed for the similarity space (sigmoid after, or divided by C
/// for inner_sigmoid_before so values stay in (0, 1)).
nn::Var similarity(const nn::Var& kernels, const nn::Var& f, SimilaritySpace space);

/// Learned semantic anchors, N_cate×C.
class CategoryKernels {
public:
    CategoryKernels(int n_categories, int channels, double init_std, nn::Initializer& init);

    nn::Var vectors() const { return vectors_; }
    int size() const { return vectors_.dim(0); }
    void collect(nn::ParamList& out) const;

private:
    nn::Var vectors_;
};

enum class SelectionRule {
    Threshold,      // every cell above theta
    LocalMaximum,   // cells above theta that are 3×3 local maxima
};

/// Grid cells of `heat` (1×S×S) selected by `rule`, in raster order.
/// Among equal neighbours the earliest in raster order is the maximum.
std::vector<GridCoord> select_centers(const Tensor& heat, double theta, SelectionRule rule);

/// Feature pixel under the centre of grid cell `g`, rounded to nearest.
nn::PixelCoord grid_to_feature(GridCoord g, int grid, int feat_h, int feat_w);

/// Kernels taken from F_ins at the selected cells, with scores from H_c.
KernelBank select_instance_kernels(const FeatureMap& f_ins, const CenterHeatmap& heat, double theta,
                                   SelectionRule rule);

/// Q_ins: one map per kernel.
SimilarityStack instance_similarity_maps(const KernelBank& bank, const FeatureMap& f_ins,
                                         SimilaritySpace space = SimilaritySpace::Cosine);

/// Q_cate: one map per category kernel (rows used as given).
SimilarityStack category_similarity_maps(const Tensor& kernels, const FeatureMap& f_cate,
                                         SimilaritySpace space = SimilaritySpace::Cosine);

/// Two-layer 64-channel fusion tower emitting N_cate maps per instance.
class FusionTower {
public:
    FusionTower(FusionMode mode, int feature_channels, int n_categories, nn::Initializer& init);

    /// q_ins: N×P, q_cate: N_cate×P, f_cate: C×H×W → (N·N_cate)×P.
    nn::Var operator()(const nn::Var& q_ins, const nn::Var& q_cate, const nn::Var& f_cate) const;
    void collect(nn::ParamList& out) const;

private:
    FusionMode mode_;
    nn::ConvNormAct hidden_;
    nn::Conv2d out_;
};

/// Index fusion: out[i·N_cate + c] = min(q_ins[i], q_cate[c]).
nn::Var fuse_index(const nn::Var& q_ins, const nn::Var& q_cate);

/// Value-level fusion of two stacks. Convs/multi need `tower` and `f_cate`.
SimilarityStack fuse(const SimilarityStack& q_ins, const SimilarityStack& q_cate, FusionMode mode,
                     const FusionTower* tower = nullptr, const FeatureMap* f_cate = nullptr);

}  // namespace uniparser
