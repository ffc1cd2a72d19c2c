// Copyright (C) 2026 The UniParser Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "uniparser/datamodel.hpp"
#include "uniparser/layers.hpp"

namespace uniparser {

struct BackboneConfig {
    std::vector<int> stage_channels{16, 32, 64, 64};
    int neck_channels = 64;
    int out_stride = 4;  // stride of the finest pyramid level, a power of two >= 2
};

void validate(const BackboneConfig& cfg);

/// Plain strided convnet: a stem of stride-2 layers reaching `out_stride`
/// then one stride-2 stage per entry of `stage_channels`, the first of which
/// stays at `out_stride`.
class Backbone {
public:
    Backbone(const BackboneConfig& cfg, nn::Initializer& init);

    /// One map per stage, finest first. Throws BadShape when the image size
    /// is not a multiple of the coarsest stride.
    std::vector<nn::Var> operator()(const nn::Var& image) const;

    std::vector<int> strides() const;
    void collect(nn::ParamList& out) const;

private:
    BackboneConfig cfg_;
    std::vector<nn::ConvNormAct> stem_;
    std::vector<std::pair<nn::ConvNormAct, nn::ConvNormAct>> stages_;
};

/// Upsamples every level to the finest size, concatenates and compresses
/// with a 1×1 convolution.
class Neck {
public:
    Neck(std::span<const int> level_channels, int out_channels, nn::Initializer& init);

    nn::Var operator()(std::span<const nn::Var> pyramid) const;
    void collect(nn::ParamList& out) const;

private:
    nn::Conv2d compress_;
};

/// Two extra channels holding row and column positions spanning [-1, 1];
/// an axis of length one maps to 0.
nn::Var append_coords(const nn::Var& f);

// Value-level wrappers over the differentiable ops.
std::vector<FeatureMap> extract_pyramid(const Backbone& backbone, const Tensor& image);
FeatureMap fuse_neck(const Neck& neck, const std::vector<FeatureMap>& pyramid);
FeatureMap append_coords(const FeatureMap& f);
FeatureMap resize_bilinear(const FeatureMap& f, int out_h, int out_w);

}  // namespace uniparser
