// Copyright (C) 2026 The UniParser Authors
// SPDX-License-Identifier: Apache-2.0

#include "uniparser/datamodel.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "uniparser/error.hpp"

namespace uniparser {

int ParsingSample::num_instances() const {
    int n = 0;
    for (auto v : instance_map.data) n = std::max(n, v);
    return n;
}

void validate(const ParsingSample& s) {
    const auto& im = s.instance_map;
    const auto& cm = s.category_map;
    if (im.height != cm.height || im.width != cm.width) {
        throw Error(ErrorCode::InconsistentLabels, s.sample_id + ": label maps differ in size");
    }
    if (!s.image.empty() && (s.image.rank() != 3 || s.image.dim(0) != 3 || s.image.dim(1) != im.height ||
                             s.image.dim(2) != im.width)) {
        throw Error(ErrorCode::InconsistentLabels, s.sample_id + ": image shape " + shape_str(s.image.shape()) +
                                                       " does not match labels");
    }
    std::vector<std::size_t> pixels;
    for (std::size_t i = 0; i < im.data.size(); ++i) {
        const int inst = im.data[i];
        const int cat = cm.data[i];
        if (inst < 0 || cat < 0) throw Error(ErrorCode::InconsistentLabels, s.sample_id + ": negative label");
        if ((inst == 0) != (cat == 0)) {
            throw Error(ErrorCode::InconsistentLabels,
                        s.sample_id + ": foreground differs between instance and category maps at pixel " +
                            std::to_string(i));
        }
        if (inst > 0) {
            if (pixels.size() < static_cast<std::size_t>(inst)) pixels.resize(static_cast<std::size_t>(inst), 0);
            ++pixels[static_cast<std::size_t>(inst - 1)];
        }
    }
    for (std::size_t id = 0; id < pixels.size(); ++id) {
        if (pixels[id] == 0) {
            throw Error(ErrorCode::InconsistentLabels,
                        s.sample_id + ": instance id " + std::to_string(id + 1) + " has no pixels");
        }
    }
}

Mask InstancePrediction::union_mask() const {
    Mask out;
    for (const auto& [cat, m] : part_masks) {
        if (out.size() == 0) out = Mask(m.height, m.width, 0);
        for (std::size_t i = 0; i < m.data.size(); ++i) out.data[i] |= m.data[i];
    }
    return out;
}

void validate(const HyperParams& hp) {
    auto in_unit = [](double v) { return v > 0.0 && v < 1.0; };
    if (!in_unit(hp.theta_c) || !in_unit(hp.theta_ctr) || !in_unit(hp.theta_masks)) {
        throw Error(ErrorCode::BadConfig, "thresholds must lie in (0, 1)");
    }
    if (hp.lambda_aux < 0 || hp.lambda_par < 0 || hp.lambda_metric < 0) {
        throw Error(ErrorCode::BadConfig, "loss weights must be non-negative");
    }
    if (hp.grid_size < 1 || hp.head_depth < 1 || hp.head_channels < 1) {
        throw Error(ErrorCode::BadConfig, "grid size, head depth and head channels must be positive");
    }
    if (hp.sigma_center <= 0) throw Error(ErrorCode::BadConfig, "sigma_center must be positive");
}

std::string to_string(SimilaritySpace s) {
    switch (s) {
        case SimilaritySpace::Cosine: return "cosine";
        case SimilaritySpace::Inner: return "inner";
        case SimilaritySpace::InnerSigmoidAfter: return "inner_sigmoid_after";
        case SimilaritySpace::InnerSigmoidBefore: return "inner_sigmoid_before";
    }
    return "cosine";
}

std::string to_string(FusionMode f) {
    switch (f) {
        case FusionMode::Index: return "index";
        case FusionMode::Convs: return "convs";
        case FusionMode::Multi: return "multi";
    }
    return "index";
}

SimilaritySpace parse_similarity_space(const std::string& s) {
    for (auto v : {SimilaritySpace::Cosine, SimilaritySpace::Inner, SimilaritySpace::InnerSigmoidAfter,
                   SimilaritySpace::InnerSigmoidBefore}) {
        if (to_string(v) == s) return v;
    }
    throw Error(ErrorCode::BadConfig, "unknown similarity space '" + s + "'");
}

FusionMode parse_fusion_mode(const std::string& s) {
    for (auto v : {FusionMode::Index, FusionMode::Convs, FusionMode::Multi}) {
        if (to_string(v) == s) return v;
    }
    throw Error(ErrorCode::BadConfig, "unknown fusion mode '" + s + "'");
}

PointF barycenter(const Mask& mask) {
    double sr = 0.0, sc = 0.0;
    std::size_t n = 0;
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (mask(y, x)) {
                sr += y;
                sc += x;
                ++n;
            }
        }
    }
    if (n == 0) throw Error(ErrorCode::EmptyMask, "barycenter of an empty mask");
    return {sr / static_cast<double>(n), sc / static_cast<double>(n)};
}

BoxI bounding_box(const Mask& mask) {
    int top = mask.height, left = mask.width, bottom = -1, right = -1;
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (!mask(y, x)) continue;
            top = std::min(top, y);
            bottom = std::max(bottom, y);
            left = std::min(left, x);
            right = std::max(right, x);
        }
    }
    if (bottom < 0) return {};
    return {top, left, bottom - top + 1, right - left + 1};
}

std::vector<InstanceGT> instance_part_masks(const ParsingSample& sample) {
    validate(sample);
    const int h = sample.height();
    const int w = sample.width();
    const int n = sample.num_instances();
    std::vector<InstanceGT> out(static_cast<std::size_t>(n));
    for (int id = 1; id <= n; ++id) {
        auto& inst = out[static_cast<std::size_t>(id - 1)];
        inst.instance_id = id;
        inst.mask = Mask(h, w, 0);
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int id = sample.instance_map(y, x);
            if (id == 0) continue;
            auto& inst = out[static_cast<std::size_t>(id - 1)];
            inst.mask(y, x) = 1;
            const int cat = sample.category_map(y, x);
            auto [it, inserted] = inst.part_masks.try_emplace(cat, h, w, 0);
            it->second(y, x) = 1;
        }
    }
    for (auto& inst : out) {
        inst.barycenter = barycenter(inst.mask);
        inst.bbox = bounding_box(inst.mask);
    }
    return out;
}

std::pair<LabelMap, LabelMap> overlay_labels(const std::vector<InstanceGT>& instances, int height, int width) {
    LabelMap inst_map(height, width, 0);
    LabelMap cat_map(height, width, 0);
    for (const auto& inst : instances) {
        for (const auto& [cat, m] : inst.part_masks) {
            for (std::size_t i = 0; i < m.data.size(); ++i) {
                if (!m.data[i]) continue;
                inst_map.data[i] = inst.instance_id;
                cat_map.data[i] = cat;
            }
        }
    }
    return {std::move(inst_map), std::move(cat_map)};
}

PointF cell_center(int row, int col, int grid, int image_h, int image_w) {
    return {(row + 0.5) / grid * image_h, (col + 0.5) / grid * image_w};
}

std::vector<GridCoord> center_region(const InstanceGT& inst, int grid, double sigma, int image_h, int image_w) {
    const double half_h = 0.5 * sigma * inst.bbox.height;
    const double half_w = 0.5 * sigma * inst.bbox.width;
    // Pixel (y, x) covers [y, y + 1) in continuous image coordinates.
    const double by = inst.barycenter.row + 0.5;
    const double bx = inst.barycenter.col + 0.5;
    std::vector<GridCoord> cells;
    for (int r = 0; r < grid; ++r) {
        for (int c = 0; c < grid; ++c) {
            const auto p = cell_center(r, c, grid, image_h, image_w);
            if (std::abs(p.row - by) <= half_h && std::abs(p.col - bx) <= half_w) {
                cells.push_back({r, c});
            }
        }
    }
    if (cells.empty()) {
        const int r = std::clamp(static_cast<int>(std::floor(by / image_h * grid)), 0,
                                 grid - 1);
        const int c = std::clamp(static_cast<int>(std::floor(bx / image_w * grid)), 0,
                                 grid - 1);
        cells.push_back({r, c});
    }
    return cells;
}

CenterHeatmap center_heatmap_gt(const std::vector<InstanceGT>& instances, int grid, double sigma, int image_h,
                                int image_w) {
    CenterHeatmap hm{Tensor({1, grid, grid}), grid};
    for (const auto& inst : instances) {
        for (auto cell : center_region(inst, grid, sigma, image_h, image_w)) hm.data.at(0, cell.row, cell.col) = 1.0;
    }
    return hm;
}

Mask resize_nearest(const Mask& mask, int out_h, int out_w) {
    Mask out(out_h, out_w, 0);
    for (int y = 0; y < out_h; ++y) {
        const int sy = std::min(mask.height - 1, static_cast<int>((y + 0.5) * mask.height / out_h));
        for (int x = 0; x < out_w; ++x) {
            const int sx = std::min(mask.width - 1, static_cast<int>((x + 0.5) * mask.width / out_w));
            out(y, x) = mask(sy, sx);
        }
    }
    return out;
}

}  // namespace uniparser
