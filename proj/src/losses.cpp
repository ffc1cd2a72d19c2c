// Copyright (C) 2026 The UniParser Authors
// SPDX-License-Identifier: Apache-2.0

#include "uniparser/losses.hpp"

#include <cmath>

#include "uniparser/error.hpp"

namespace uniparser {

std::vector<double> mask_target(const Mask& mask) {
    std::vector<double> t(mask.size());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = mask.data[i] ? 1.0 : 0.0;
    return t;
}

nn::Var dice_loss(const nn::Var& pred, const Mask& gt) {
    if (pred.value().size() != gt.size()) {
        throw Error(ErrorCode::BadShape, "dice prediction " + shape_str(pred.shape()) + " vs mask " +
                                             std::to_string(gt.height) + "x" + std::to_string(gt.width));
    }
    return nn::dice(pred, mask_target(gt), kDiceEps);
}

nn::Var focal_center_loss(const nn::Var& heat, const CenterHeatmap& target) {
    if (heat.shape() != target.data.shape()) {
        throw Error(ErrorCode::BadShape, "heatmap " + shape_str(heat.shape()) + " vs target " +
                                             shape_str(target.data.shape()));
    }
    return nn::focal(heat, target.data.values(), kFocalAlpha, kFocalGamma);
}

namespace {

nn::Var add_all(const std::vector<nn::Var>& terms) {
    nn::Var acc = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) acc = nn::add(acc, terms[i]);
    return acc;
}

nn::Var zero() { return nn::Var(Tensor({1})); }

}  // namespace

nn::Var map_set_loss(const nn::Var& maps, std::span<const MapTarget> targets) {
    if (targets.empty()) return zero();
    if (!maps.defined() || maps.dim(0) != static_cast<int>(targets.size())) {
        throw Error(ErrorCode::BadShape, "need one target per similarity map");
    }
    std::vector<nn::Var> terms;
    terms.reserve(targets.size());
    for (std::size_t k = 0; k < targets.size(); ++k) {
        const int row[] = {static_cast<int>(k)};
        nn::Var q = nn::select_rows(maps, row);
        terms.push_back(targets[k] ? dice_loss(q, *targets[k]) : nn::mean_abs(q));
    }
    return nn::scale(add_all(terms), 1.0 / static_cast<double>(targets.size()));
}

nn::Var aux_loss(const nn::Var& q_ins, std::span<const Mask> instance_masks, const nn::Var& q_cate,
                 std::span<const MapTarget> category_masks) {
    std::vector<MapTarget> ins(instance_masks.begin(), instance_masks.end());
    return nn::add(map_set_loss(q_ins, ins), map_set_loss(q_cate, category_masks));
}

nn::Var parsing_loss(const nn::Var& q_parsing, std::span<const MapTarget> targets) {
    return map_set_loss(q_parsing, targets);
}

nn::Var similarity_matrix(const nn::Var& vectors) { return nn::matmul(vectors, nn::transpose(vectors)); }

nn::Var metric_loss(const nn::Var& a_ins, std::span<const int> ins_groups, const nn::Var& a_cate) {
    const int n_c = a_ins.defined() ? a_ins.dim(0) : 0;
    const int n_cate = a_cate.defined() ? a_cate.dim(0) : 0;
    if (n_c + n_cate == 0) return zero();
    if (!ins_groups.empty() && static_cast<int>(ins_groups.size()) != n_c) {
        throw Error(ErrorCode::BadShape, "metric loss needs one group per instance kernel");
    }
    std::vector<nn::Var> terms;
    if (n_cate > 0) terms.push_back(nn::abs_dev_from_identity(a_cate));
    if (n_c > 0) {
        std::vector<std::uint8_t> keep;
        if (!ins_groups.empty()) {
            keep.assign(static_cast<std::size_t>(n_c) * n_c, 1);
            for (int i = 0; i < n_c; ++i) {
                for (int j = 0; j < n_c; ++j) {
                    if (i != j && ins_groups[i] >= 0 && ins_groups[i] == ins_groups[j]) keep[i * n_c + j] = 0;
                }
            }
        }
        terms.push_back(nn::abs_dev_from_identity(a_ins, keep));
    }
    return nn::scale(add_all(terms), 1.0 / (n_c + n_cate));
}

namespace {

double value_of(const nn::Var& v) { return v.defined() ? v.item() : 0.0; }

void check_finite(double v, const char* name) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteLoss, std::string(name) + " = " + std::to_string(v));
}

}  // namespace

LossReport total_loss(double l_center, double l_aux, double l_par, double l_metric, const HyperParams& hp) {
    check_finite(l_center, "l_center");
    check_finite(l_aux, "l_aux");
    check_finite(l_par, "l_par");
    check_finite(l_metric, "l_metric");
    LossReport r{l_center, l_aux, l_par, l_metric, 0.0};
    r.l_total = l_center + hp.lambda_aux * l_aux + hp.lambda_par * l_par + hp.lambda_metric * l_metric;
    return r;
}

TotalLoss total_loss(const LossParts& parts, const HyperParams& hp) {
    TotalLoss out;
    out.report = total_loss(value_of(parts.center), value_of(parts.aux), value_of(parts.par),
                            value_of(parts.metric), hp);
    std::vector<nn::Var> terms;
    if (parts.center.defined()) terms.push_back(parts.center);
    if (parts.aux.defined()) terms.push_back(nn::scale(parts.aux, hp.lambda_aux));
    if (parts.par.defined()) terms.push_back(nn::scale(parts.par, hp.lambda_par));
    if (parts.metric.defined()) terms.push_back(nn::scale(parts.metric, hp.lambda_metric));
    out.total = terms.empty() ? zero() : add_all(terms);
    return out;
}

double mean_off_diagonal(const Tensor& a) {
    const int n = a.dim(0);
    if (n < 2) return 0.0;
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i != j) s += std::abs(a.at(i, j));
        }
    }
    return s / (static_cast<double>(n) * (n - 1));
}

}  // namespace uniparser
