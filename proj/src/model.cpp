// Copyright (C) 2026 The UniParser Authors
// SPDX-License-Identifier: Apache-2.0

#include "uniparser/model.hpp"

#include <optional>

#include "uniparser/error.hpp"

namespace uniparser {

void validate(const ModelConfig& cfg) {
    validate(cfg.backbone);
    validate(cfg.hp);
    if (cfg.n_categories < 1) throw Error(ErrorCode::BadConfig, "n_categories must be >= 1");
}

struct Model::Parts {
    Backbone backbone;
    Neck neck;
    CenterLocator center;
    FeatureSpaceBuilder ifsb;
    FeatureSpaceBuilder cfsb;
    CategoryKernels kernels;
    std::optional<FusionTower> fusion;

    Parts(const ModelConfig& cfg, nn::Initializer& init)
        : backbone(cfg.backbone, init),
          neck(cfg.backbone.stage_channels, cfg.backbone.neck_channels, init),
          center(cfg.backbone.neck_channels, cfg.hp.head_channels, cfg.hp.head_depth, init),
          ifsb(cfg.backbone.neck_channels, cfg.hp.head_channels, cfg.hp.head_depth, true, init),
          cfsb(cfg.backbone.neck_channels, cfg.hp.head_channels, cfg.hp.head_depth, false, init),
          kernels(cfg.n_categories, cfg.hp.head_channels, cfg.hp.kernel_init_std, init) {
        if (cfg.hp.fusion_mode != FusionMode::Index) {
            fusion.emplace(cfg.hp.fusion_mode, cfg.hp.head_channels, cfg.n_categories, init);
        }
    }
};

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
    validate(cfg_);
    nn::Initializer init(cfg_.seed);
    parts_ = std::make_unique<Parts>(cfg_, init);
    parts_->backbone.collect(params_);
    parts_->neck.collect(params_);
    parts_->center.collect(params_);
    parts_->ifsb.collect("ifsb", params_);
    parts_->cfsb.collect("cfsb", params_);
    parts_->kernels.collect(params_);
    if (parts_->fusion) parts_->fusion->collect(params_);
}

Model::Model(Model&&) noexcept = default;
Model& Model::operator=(Model&&) noexcept = default;
Model::~Model() = default;

ForwardOutputs Model::forward(const Tensor& image) const {
    const auto space = cfg_.hp.similarity_space;
    ForwardOutputs out;
    auto pyramid = parts_->backbone(nn::Var(image));
    out.f_neck = parts_->neck(pyramid);
    out.heat = parts_->center(out.f_neck, cfg_.hp.grid_size);
    out.f_ins = parts_->ifsb(out.f_neck, space);
    out.f_cate = parts_->cfsb(out.f_neck, space);
    out.k_cate = embed(parts_->kernels.vectors(), space, true);
    out.q_cate = similarity(out.k_cate, out.f_cate, space);
    return out;
}

InstanceOutputs Model::instances(const ForwardOutputs& out, std::span<const GridCoord> cells) const {
    InstanceOutputs r;
    if (cells.empty()) return r;
    const int h = out.f_ins.dim(1), w = out.f_ins.dim(2);
    std::vector<nn::PixelCoord> pixels;
    pixels.reserve(cells.size());
    for (auto g : cells) pixels.push_back(grid_to_feature(g, cfg_.hp.grid_size, h, w));
    r.kernels = nn::gather_pixels(out.f_ins, pixels);
    r.q_ins = similarity(r.kernels, out.f_ins, cfg_.hp.similarity_space);
    r.q_parsing = parts_->fusion ? (*parts_->fusion)(r.q_ins, out.q_cate, out.f_cate)
                                 : fuse_index(r.q_ins, out.q_cate);
    return r;
}

}  // namespace uniparser
