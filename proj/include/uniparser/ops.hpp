// Copyright (C) 2026 The UniParser Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <utility>
#include <vector>

#include "uniparser/autograd.hpp"

// Differentiable tensor operations. Feature maps are single images laid out
// C×H×W; similarity stacks are flattened to K×(H·W).
namespace uniparser::nn {

struct PixelCoord {
    int row = 0;
    int col = 0;
    bool operator==(const PixelCoord&) const = default;
};

// Elementwise and reductions.
Var add(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var sum(const Var& a);
Var mean(const Var& a);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var reshape(const Var& a, std::vector<int> shape);

/// 2-D convolution, x: C×H×W, weight: O×C×k×k, bias: O (may be undefined).
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding);

/// Group normalization over C×H×W with per-channel affine parameters.
Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps = 1e-5);

/// Bilinear resize with half-pixel centers (align_corners = false).
Var resize_bilinear(const Var& x, int out_h, int out_w);

/// Concatenates C_i×H×W maps (or K_i×N matrices) along the leading axis.
Var concat(std::span<const Var> parts);

/// x / max(||x||, eps) for each pixel vector of a C×H×W map.
Var normalize_channels(const Var& x, double eps = 1e-8);

/// x / max(||x||, eps) for each row of a K×C matrix.
Var normalize_rows(const Var& x, double eps = 1e-8);

/// Rows x[:, p.row, p.col] stacked into a K×C matrix.
Var gather_pixels(const Var& x, std::span<const PixelCoord> coords);

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

/// Rows of a K×N matrix selected (possibly repeated) by index.
Var select_rows(const Var& a, std::span<const int> rows);

/// out[i·M + c, p] = min(a[i, p], b[c, p]) for a: N×P and b: M×P.
Var pairwise_min(const Var& a, const Var& b);

/// Each channel of f (C×H×W) multiplied by the single map g (H×W).
Var gate_channels(const Var& g, const Var& f);

// Scalar loss kernels with hand-derived gradients.

/// 1 − 2Σpg / (Σp² + Σg² + eps) with p clamped to [0, 1].
Var dice(const Var& pred, std::span<const double> target, double eps = 1e-6);

/// Mean |x|.
Var mean_abs(const Var& x);

/// Mean binary focal loss on probabilities, clipped to [clip, 1 − clip].
Var focal(const Var& prob, std::span<const double> target, double alpha, double gamma, double clip = 1e-6);

/// Σ |a_ij − δ_ij| over entries whose `keep` flag is set (row-major, all kept when empty).
Var abs_dev_from_identity(const Var& a, std::span<const std::uint8_t> keep = {});

}  // namespace uniparser::nn
