// Copyright (C) 2026 The UniParser Authors
// SPDX-License-Identifier: Apache-2.0

#include "uniparser/features.hpp"

#include "uniparser/error.hpp"

namespace uniparser {

void validate(const BackboneConfig& cfg) {
    if (cfg.stage_channels.size() < 2) throw Error(ErrorCode::BadConfig, "backbone needs at least two stages");
    for (int c : cfg.stage_channels) {
        if (c < 1) throw Error(ErrorCode::BadConfig, "stage channels must be positive");
    }
    if (cfg.neck_channels < 1) throw Error(ErrorCode::BadConfig, "neck channels must be positive");
    if (cfg.out_stride < 2 || (cfg.out_stride & (cfg.out_stride - 1)) != 0) {
        throw Error(ErrorCode::BadConfig, "out_stride must be a power of two >= 2");
    }
}

Backbone::Backbone(const BackboneConfig& cfg, nn::Initializer& init) : cfg_(cfg) {
    validate(cfg_);
    int in = 3;
    for (int s = 2; s < cfg_.out_stride; s *= 2) {
        stem_.push_back(nn::ConvNormAct::make(init, in, cfg_.stage_channels[0], 3, 2));
        in = cfg_.stage_channels[0];
    }
    for (int c : cfg_.stage_channels) {
        auto down = nn::ConvNormAct::make(init, in, c, 3, 2);
        auto body = nn::ConvNormAct::make(init, c, c, 3, 1);
        stages_.emplace_back(std::move(down), std::move(body));
        in = c;
    }
}

std::vector<int> Backbone::strides() const {
    std::vector<int> out;
    int s = cfg_.out_stride;
    for (std::size_t i = 0; i < stages_.size(); ++i, s *= 2) out.push_back(s);
    return out;
}

std::vector<nn::Var> Backbone::operator()(const nn::Var& image) const {
    if (image.value().rank() != 3 || image.dim(0) != 3) {
        throw Error(ErrorCode::BadShape, "backbone input must be 3xHxW, got " + shape_str(image.shape()));
    }
    const int coarsest = strides().back();
    if (image.dim(1) % coarsest != 0 || image.dim(2) % coarsest != 0) {
        throw Error(ErrorCode::BadShape, "image size " + std::to_string(image.dim(1)) + "x" +
                                             std::to_string(image.dim(2)) + " is not a multiple of stride " +
                                             std::to_string(coarsest));
    }
    nn::Var x = image;
    for (const auto& l : stem_) x = l(x);
    std::vector<nn::Var> pyramid;
    for (const auto& [down, body] : stages_) {
        x = body(down(x));
        pyramid.push_back(x);
    }
    return pyramid;
}

void Backbone::collect(nn::ParamList& out) const {
    for (std::size_t i = 0; i < stem_.size(); ++i) stem_[i].collect("backbone.stem." + std::to_string(i), out);
    for (std::size_t i = 0; i < stages_.size(); ++i) {
        const std::string p = "backbone.stage" + std::to_string(i);
        stages_[i].first.collect(p + ".down", out);
        stages_[i].second.collect(p + ".body", out);
    }
}

Neck::Neck(std::span<const int> level_channels, int out_channels, nn::Initializer& init) {
    int total = 0;
    for (int c : level_channels) total += c;
    compress_ = nn::Conv2d::make(init, total, out_channels, 1, 1);
}

nn::Var Neck::operator()(std::span<const nn::Var> pyramid) const {
    if (pyramid.empty()) throw Error(ErrorCode::BadShape, "neck needs at least one pyramid level");
    const int h = pyramid[0].dim(1);
    const int w = pyramid[0].dim(2);
    std::vector<nn::Var> levels;
    levels.reserve(pyramid.size());
    for (const auto& p : pyramid) {
        levels.push_back(p.dim(1) == h && p.dim(2) == w ? p : nn::resize_bilinear(p, h, w));
    }
    return compress_(nn::concat(levels));
}

void Neck::collect(nn::ParamList& out) const { compress_.collect("neck.compress", out); }

nn::Var append_coords(const nn::Var& f) {
    if (f.value().rank() != 3) throw Error(ErrorCode::BadShape, "append_coords expects CxHxW");
    const int h = f.dim(1), w = f.dim(2);
    Tensor coords({2, h, w});
    auto span = [](int i, int n) { return n == 1 ? 0.0 : -1.0 + 2.0 * i / (n - 1); };
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            coords.at(0, y, x) = span(y, h);
            coords.at(1, y, x) = span(x, w);
        }
    }
    const nn::Var parts[] = {f, nn::Var(std::move(coords))};
    return nn::concat(parts);
}

std::vector<FeatureMap> extract_pyramid(const Backbone& backbone, const Tensor& image) {
    nn::NoGradGuard guard;
    auto levels = backbone(nn::Var(image));
    auto strides = backbone.strides();
    std::vector<FeatureMap> out;
    for (std::size_t i = 0; i < levels.size(); ++i) out.push_back({levels[i].value(), strides[i]});
    return out;
}

FeatureMap fuse_neck(const Neck& neck, const std::vector<FeatureMap>& pyramid) {
    nn::NoGradGuard guard;
    if (pyramid.empty()) throw Error(ErrorCode::BadShape, "neck needs at least one pyramid level");
    std::vector<nn::Var> levels;
    for (const auto& f : pyramid) levels.emplace_back(f.data);
    return {neck(levels).value(), pyramid[0].stride};
}

FeatureMap append_coords(const FeatureMap& f) {
    nn::NoGradGuard guard;
    return {append_coords(nn::Var(f.data)).value(), f.stride};
}

FeatureMap resize_bilinear(const FeatureMap& f, int out_h, int out_w) {
    nn::NoGradGuard guard;
    const int stride = out_h == f.height() ? f.stride : f.stride * f.height() / std::max(1, out_h);
    return {nn::resize_bilinear(nn::Var(f.data), out_h, out_w).value(), std::max(1, stride)};
}

}  // namespace uniparser
