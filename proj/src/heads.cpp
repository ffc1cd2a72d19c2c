// Copyright (C) 2026 The UniParser Authors
// SPDX-License-Identifier: Apache-2.0

#include "uniparser/heads.hpp"

#include <algorithm>
#include <cmath>

#include "uniparser/error.hpp"
#include "uniparser/features.hpp"

namespace uniparser {

namespace {

// Final CL bias so the initial heat is 0.01 everywhere.
const double kCenterPriorBias = -std::log(99.0);

nn::Var as_matrix(const nn::Var& f) { return nn::reshape(f, {f.dim(0), f.dim(1) * f.dim(2)}); }

}  // namespace

CenterLocator::CenterLocator(int in_channels, int channels, int depth, nn::Initializer& init)
    : tower_(nn::Tower::make(init, in_channels + 2, channels, depth)),
      predict_(nn::Conv2d::make(init, channels, 1, 1, 1, 0.01)) {
    predict_.bias.mutable_value().fill(kCenterPriorBias);
}

nn::Var CenterLocator::operator()(const nn::Var& f_neck, int grid) const {
    nn::Var x = nn::resize_bilinear(f_neck, grid, grid);
    return nn::sigmoid(predict_(tower_(append_coords(x))));
}

void CenterLocator::collect(nn::ParamList& out) const {
    tower_.collect("center.tower", out);
    predict_.collect("center.predict", out);
}

FeatureSpaceBuilder::FeatureSpaceBuilder(int in_channels, int channels, int depth, bool with_coords,
                                         nn::Initializer& init)
    : tower_(nn::Tower::make(init, in_channels + (with_coords ? 2 : 0), channels, depth, false)),
      with_coords_(with_coords) {}

nn::Var FeatureSpaceBuilder::operator()(const nn::Var& f_neck, SimilaritySpace space) const {
    nn::Var f = tower_(with_coords_ ? append_coords(f_neck) : f_neck);
    return embed(f, space, false);
}

void FeatureSpaceBuilder::collect(const std::string& prefix, nn::ParamList& out) const {
    tower_.collect(prefix + ".tower", out);
}

nn::Var embed(const nn::Var& x, SimilaritySpace space, bool rows) {
    switch (space) {
        case SimilaritySpace::Cosine:
            return rows ? nn::normalize_rows(x) : nn::normalize_channels(x);
        case SimilaritySpace::InnerSigmoidBefore:
            return nn::sigmoid(x);
        case SimilaritySpace::Inner:
        case SimilaritySpace::InnerSigmoidAfter:
            break;
    }
    return x;
}

nn::Var similarity(const nn::Var& kernels, const nn::Var& f, SimilaritySpace space) {
    if (kernels.dim(1) != f.dim(0)) {
        throw Error(ErrorCode::BadShape, "kernel width " + std::to_string(kernels.dim(1)) +
                                             " does not match feature channels " + std::to_string(f.dim(0)));
    }
    nn::Var q = nn::matmul(kernels, as_matrix(f));
    switch (space) {
        case SimilaritySpace::InnerSigmoidAfter:
            return nn::sigmoid(q);
        case SimilaritySpace::InnerSigmoidBefore:
            return nn::scale(q, 1.0 / f.dim(0));
        case SimilaritySpace::Cosine:
        case SimilaritySpace::Inner:
            break;
    }
    return q;
}

CategoryKernels::CategoryKernels(int n_categories, int channels, double init_std, nn::Initializer& init)
    : vectors_(nn::parameter(init.normal({n_categories, channels}, init_std))) {}

void CategoryKernels::collect(nn::ParamList& out) const { out.push_back({"category.kernels", vectors_}); }

std::vector<GridCoord> select_centers(const Tensor& heat, double theta, SelectionRule rule) {
    if (heat.rank() != 3 || heat.dim(0) != 1) throw Error(ErrorCode::BadShape, "heatmap must be 1xSxS");
    const int h = heat.dim(1), w = heat.dim(2);
    std::vector<GridCoord> out;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double v = heat.at(0, y, x);
            if (!(v > theta)) continue;
            bool keep = true;
            if (rule == SelectionRule::LocalMaximum) {
                for (int dy = -1; dy <= 1 && keep; ++dy) {
                    for (int dx = -1; dx <= 1 && keep; ++dx) {
                        const int ny = y + dy, nx = x + dx;
                        if ((dy == 0 && dx == 0) || ny < 0 || nx < 0 || ny >= h || nx >= w) continue;
                        const double n = heat.at(0, ny, nx);
                        const bool earlier = dy < 0 || (dy == 0 && dx < 0);
                        keep = earlier ? v > n : v >= n;
                    }
                }
            }
            if (keep) out.push_back({y, x});
        }
    }
    return out;
}

nn::PixelCoord grid_to_feature(GridCoord g, int grid, int feat_h, int feat_w) {
    auto map = [grid](int i, int n) {
        const long r = std::lround((i + 0.5) / grid * n - 0.5);
        return static_cast<int>(std::clamp<long>(r, 0, n - 1));
    };
    return {map(g.row, feat_h), map(g.col, feat_w)};
}

KernelBank select_instance_kernels(const FeatureMap& f_ins, const CenterHeatmap& heat, double theta,
                                   SelectionRule rule) {
    KernelBank bank;
    bank.origin = KernelOrigin::Instance;
    bank.coords = select_centers(heat.data, theta, rule);
    const int c = f_ins.channels();
    bank.vectors = Tensor({static_cast<int>(bank.coords.size()), c});
    for (std::size_t k = 0; k < bank.coords.size(); ++k) {
        const auto p = grid_to_feature(bank.coords[k], heat.grid, f_ins.height(), f_ins.width());
        for (int ch = 0; ch < c; ++ch) bank.vectors.at(static_cast<int>(k), ch) = f_ins.data.at(ch, p.row, p.col);
        bank.scores.push_back(heat.at(bank.coords[k].row, bank.coords[k].col));
    }
    return bank;
}

namespace {

SimilarityStack to_stack(const nn::Var& q, int h, int w, SimilarityKind kind, int n_categories = 0) {
    return {q.value().reshaped({q.dim(0), h, w}), kind, n_categories};
}

}  // namespace

SimilarityStack instance_similarity_maps(const KernelBank& bank, const FeatureMap& f_ins, SimilaritySpace space) {
    if (bank.size() == 0) return {Tensor({0, f_ins.height(), f_ins.width()}), SimilarityKind::Instance, 0};
    nn::NoGradGuard guard;
    auto q = similarity(nn::Var(bank.vectors), nn::Var(f_ins.data), space);
    return to_stack(q, f_ins.height(), f_ins.width(), SimilarityKind::Instance);
}

SimilarityStack category_similarity_maps(const Tensor& kernels, const FeatureMap& f_cate, SimilaritySpace space) {
    nn::NoGradGuard guard;
    auto q = similarity(nn::Var(kernels), nn::Var(f_cate.data), space);
    return to_stack(q, f_cate.height(), f_cate.width(), SimilarityKind::Category, kernels.dim(0));
}

FusionTower::FusionTower(FusionMode mode, int feature_channels, int n_categories, nn::Initializer& init)
    : mode_(mode) {
    const int in = mode == FusionMode::Multi ? feature_channels : 1 + n_categories;
    hidden_ = nn::ConvNormAct::make(init, in, 64, 3, 1);
    out_ = nn::Conv2d::make(init, 64, n_categories, 1, 1);
}

nn::Var FusionTower::operator()(const nn::Var& q_ins, const nn::Var& q_cate, const nn::Var& f_cate) const {
    const int h = f_cate.dim(1), w = f_cate.dim(2);
    const int n_cate = q_cate.dim(0);
    std::vector<nn::Var> per_instance;
    for (int i = 0; i < q_ins.dim(0); ++i) {
        const int row[] = {i};
        nn::Var qi = nn::select_rows(q_ins, row);
        nn::Var x;
        if (mode_ == FusionMode::Multi) {
            x = nn::gate_channels(nn::reshape(qi, {h, w}), f_cate);
        } else {
            const nn::Var parts[] = {nn::reshape(qi, {1, h, w}), nn::reshape(q_cate, {n_cate, h, w})};
            x = nn::concat(parts);
        }
        per_instance.push_back(as_matrix(out_(hidden_(x))));
    }
    return nn::concat(per_instance);
}

void FusionTower::collect(nn::ParamList& out) const {
    const std::string p = mode_ == FusionMode::Multi ? "fusion.multi" : "fusion.convs";
    hidden_.collect(p + ".hidden", out);
    out_.collect(p + ".out", out);
}

nn::Var fuse_index(const nn::Var& q_ins, const nn::Var& q_cate) { return nn::pairwise_min(q_ins, q_cate); }

SimilarityStack fuse(const SimilarityStack& q_ins, const SimilarityStack& q_cate, FusionMode mode,
                     const FusionTower* tower, const FeatureMap* f_cate) {
    const int h = q_cate.maps.dim(1), w = q_cate.maps.dim(2);
    const int n_cate = q_cate.size();
    if (q_ins.maps.dim(1) != h || q_ins.maps.dim(2) != w) {
        throw Error(ErrorCode::BadShape, "Q_ins and Q_cate differ in spatial size");
    }
    if (q_ins.size() == 0) return {Tensor({0, h, w}), SimilarityKind::Parsing, n_cate};
    nn::NoGradGuard guard;
    nn::Var qi(q_ins.maps.reshaped({q_ins.size(), h * w}));
    nn::Var qc(q_cate.maps.reshaped({n_cate, h * w}));
    nn::Var out;
    if (mode == FusionMode::Index) {
        out = fuse_index(qi, qc);
    } else {
        if (tower == nullptr || f_cate == nullptr) {
            throw Error(ErrorCode::BadConfig, "fusion mode " + to_string(mode) + " needs a tower and F_cate");
        }
        out = (*tower)(qi, qc, nn::Var(f_cate->data));
    }
    return to_stack(out, h, w, SimilarityKind::Parsing, n_cate);
}

}  // namespace uniparser
