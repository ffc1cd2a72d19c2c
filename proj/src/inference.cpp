// Copyright (C) 2026 The UniParser Authors
// SPDX-License-Identifier: Apache-2.0

#include "uniparser/inference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "uniparser/error.hpp"

namespace uniparser {

ParsingPrediction decode_parsing(const Tensor& q_parsing, std::span<const double> scores, int n_categories,
                                 double theta_masks) {
    const int n = static_cast<int>(scores.size());
    if (q_parsing.rank() != 3 || q_parsing.dim(0) != n * n_categories) {
        throw Error(ErrorCode::BadShape, "parsing stack " + shape_str(q_parsing.shape()) + " does not hold " +
                                             std::to_string(n) + "x" + std::to_string(n_categories) + " maps");
    }
    const int h = q_parsing.dim(1), w = q_parsing.dim(2);
    ParsingPrediction pred{h, w, {}};
    for (int i = 0; i < n; ++i) {
        InstancePrediction inst;
        inst.score = scores[i];
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                int best = 0;
                double best_v = q_parsing.at(i * n_categories, y, x);
                for (int c = 1; c < n_categories; ++c) {
                    const double v = q_parsing.at(i * n_categories + c, y, x);
                    if (v > best_v) best = c, best_v = v;
                }
                if (best_v < theta_masks) continue;
                auto [it, fresh] = inst.part_masks.try_emplace(best + 1, h, w, 0);
                it->second(y, x) = 1;
            }
        }
        if (!inst.part_masks.empty()) pred.instances.push_back(std::move(inst));
    }
    return pred;
}

ParsingPrediction predict(const Model& model, const Tensor& image) {
    nn::NoGradGuard guard;
    const auto& cfg = model.config();
    const int h = image.dim(1), w = image.dim(2);
    auto out = model.forward(image);
    auto cells = select_centers(out.heat.value(), cfg.hp.theta_ctr, SelectionRule::LocalMaximum);
    if (cells.empty()) return {h, w, {}};
    std::vector<double> scores;
    for (auto g : cells) scores.push_back(out.heat.value().at(0, g.row, g.col));
    auto inst = model.instances(out, cells);
    const int fh = out.f_ins.dim(1), fw = out.f_ins.dim(2);
    auto maps = nn::reshape(inst.q_parsing, {inst.q_parsing.dim(0), fh, fw});
    auto full = (fh == h && fw == w) ? maps : nn::resize_bilinear(maps, h, w);
    return decode_parsing(full.value(), scores, cfg.n_categories, cfg.hp.theta_masks);
}

Tensor category_kernels(const Model& model) {
    nn::NoGradGuard guard;
    for (const auto& p : model.parameters()) {
        if (p.name == "category.kernels") {
            return embed(p.var, model.config().hp.similarity_space, true).value();
        }
    }
    throw Error(ErrorCode::BadConfig, "model has no category kernels");
}

std::vector<double> matrix_nms_decay(const ParsingPrediction& prediction, double sigma) {
    const auto n = prediction.instances.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return prediction.instances[a].score > prediction.instances[b].score;
    });
    std::vector<Mask> masks;
    masks.reserve(n);
    for (auto i : order) masks.push_back(prediction.instances[i].union_mask());

    // iou[i][j] for i ranked above j; compensation is each instance's largest
    // overlap with anything ranked above it.
    std::vector<std::vector<double>> iou(n, std::vector<double>(n, 0.0));
    std::vector<double> comp(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < j; ++i) {
            iou[i][j] = mask_iou(masks[i], masks[j]);
            comp[j] = std::max(comp[j], iou[i][j]);
        }
    }
    std::vector<double> decay(n, 1.0);
    for (std::size_t j = 0; j < n; ++j) {
        double d = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) {
            d = std::min(d, std::exp(-sigma * (iou[i][j] * iou[i][j] - comp[i] * comp[i])));
        }
        decay[order[j]] = n == 0 ? 1.0 : d;
    }
    return decay;
}

ParsingPrediction matrix_nms(const ParsingPrediction& prediction, const MatrixNmsOptions& opts) {
    const auto decay = matrix_nms_decay(prediction, opts.sigma);
    ParsingPrediction out{prediction.height, prediction.width, {}};
    for (std::size_t i = 0; i < prediction.instances.size(); ++i) {
        InstancePrediction inst = prediction.instances[i];
        inst.score *= decay[i];
        if (opts.score_cutoff > 0.0 && inst.score < opts.score_cutoff) continue;
        out.instances.push_back(std::move(inst));
    }
    return out;
}

Rgb palette_color(int instance, int category) {
    // Golden-angle hue walk over categories, brightness alternating by instance.
    const double hue = std::fmod(category * 137.508 + instance * 23.0, 360.0) / 60.0;
    const double v = instance % 2 == 0 ? 1.0 : 0.7;
    const double x = v * (1.0 - std::abs(std::fmod(hue, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(hue)) {
        case 0: r = v, g = x; break;
        case 1: r = x, g = v; break;
        case 2: g = v, b = x; break;
        case 3: g = x, b = v; break;
        case 4: r = x, b = v; break;
        default: r = v, b = x; break;
    }
    auto q = [](double c) { return static_cast<std::uint8_t>(std::lround(c * 255.0)); };
    return {q(r), q(g), q(b)};
}

RgbImage render_overlay(const RgbImage& image, const ParsingPrediction& prediction) {
    if (!prediction.instances.empty() && (prediction.height != image.height || prediction.width != image.width)) {
        throw Error(ErrorCode::BadShape, "prediction size does not match the image");
    }
    RgbImage out = image;
    for (std::size_t i = 0; i < prediction.instances.size(); ++i) {
        for (const auto& [cat, mask] : prediction.instances[i].part_masks) {
            const Rgb col = palette_color(static_cast<int>(i), cat);
            for (int y = 0; y < mask.height; ++y) {
                for (int x = 0; x < mask.width; ++x) {
                    if (!mask(y, x)) continue;
                    const auto idx = (static_cast<std::size_t>(y) * image.width + x) * 3;
                    bool changed = false;
                    for (int ch = 0; ch < 3; ++ch) {
                        const int orig = image.pixels[idx + ch];
                        const int v = (orig + col[ch] + 1) / 2;
                        changed = changed || v != orig;
                        out.pixels[idx + ch] = static_cast<std::uint8_t>(v);
                    }
                    // Keep painted pixels distinguishable even when the palette matches.
                    if (!changed) {
                        const int orig = image.pixels[idx];
                        out.pixels[idx] = static_cast<std::uint8_t>(orig < 128 ? orig + 64 : orig - 64);
                    }
                }
            }
        }
    }
    return out;
}

}  // namespace uniparser
