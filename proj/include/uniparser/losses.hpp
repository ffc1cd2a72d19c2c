// Copyright (C) 2026 The UniParser Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <vector>

#include "uniparser/datamodel.hpp"
#include "uniparser/ops.hpp"

namespace uniparser {

struct LossReport {
    double l_center = 0.0;
    double l_aux = 0.0;
    double l_par = 0.0;
    double l_metric = 0.0;
    double l_total = 0.0;
};

/// Flattened binary target, 1.0 for set pixels.
std::vector<double> mask_target(const Mask& mask);

inline constexpr double kDiceEps = 1e-6;
inline constexpr double kFocalAlpha = 0.25;
inline constexpr double kFocalGamma = 2.0;

/// V-Net dice on a prediction clamped to [0, 1]. Throws BadShape.
nn::Var dice_loss(const nn::Var& pred, const Mask& gt);

/// Mean focal loss over the S×S cells of the centre heatmap.
nn::Var focal_center_loss(const nn::Var& heat, const CenterHeatmap& target);

/// One row of a similarity matrix and its target: a mask for dice, or
/// nullopt for maps that should be pulled to zero.
using MapTarget = std::optional<Mask>;

/// Mean over rows of dice (target present) or mean |q| (target absent).
/// `maps` is K×P with P = mask pixels. Zero rows give 0.
nn::Var map_set_loss(const nn::Var& maps, std::span<const MapTarget> targets);

/// Instance dice averaged over kernels plus the category term averaged
/// over categories. `instance_masks` has one entry per row of q_ins;
/// `category_masks` one per category, nullopt for absent categories.
nn::Var aux_loss(const nn::Var& q_ins, std::span<const Mask> instance_masks, const nn::Var& q_cate,
                 std::span<const MapTarget> category_masks);

/// q_parsing is (N_c·N_cate)×P in instance-major order; `targets` matches it.
nn::Var parsing_loss(const nn::Var& q_parsing, std::span<const MapTarget> targets);

/// A = V·Vᵀ.
nn::Var similarity_matrix(const nn::Var& vectors);

/// Σ|A_cate − I| + Σ|A_ins − I| over kept entries, divided by N_cate + N_c.
/// `ins_groups` gives each instance kernel's group; off-diagonal pairs in the
/// same group (≥ 0) are excluded. Either matrix may be undefined (empty).
nn::Var metric_loss(const nn::Var& a_ins, std::span<const int> ins_groups, const nn::Var& a_cate);

struct LossParts {
    nn::Var center;
    nn::Var aux;
    nn::Var par;
    nn::Var metric;
};

struct TotalLoss {
    nn::Var total;
    LossReport report;
};

/// Weighted sum with the λ of `hp`. Undefined parts count as 0. Throws
/// NonFiniteLoss naming the first non-finite term.
TotalLoss total_loss(const LossParts& parts, const HyperParams& hp);

/// Scalar version used where no graph is needed.
LossReport total_loss(double l_center, double l_aux, double l_par, double l_metric, const HyperParams& hp);

/// Mean |off-diagonal| of a square matrix; 0 for fewer than two rows.
double mean_off_diagonal(const Tensor& a);

}  // namespace uniparser
