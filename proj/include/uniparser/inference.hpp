// Copyright (C) 2026 The UniParser Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "uniparser/datamodel.hpp"
#include "uniparser/image_io.hpp"
#include "uniparser/model.hpp"

namespace uniparser {

/// Turns per-instance category maps into part masks. `q_parsing` is
/// (N·N_cate)×H×W at output resolution; a pixel takes the argmax category
/// of its instance when that value is ≥ theta_masks (lowest id wins ties).
/// Instances with no pixels are dropped.
ParsingPrediction decode_parsing(const Tensor& q_parsing, std::span<const double> scores, int n_categories,
                                 double theta_masks);

/// Full NMS-free inference: local-maximum centres above theta_ctr, index
/// (or configured) fusion, bilinear upsampling to the image size, decode.
ParsingPrediction predict(const Model& model, const Tensor& image);

/// Category kernels of a model after the similarity-space transform.
Tensor category_kernels(const Model& model);

struct MatrixNmsOptions {
    double sigma = 2.0;
    double score_cutoff = 0.05;  // instances decayed below this are removed; 0 keeps all
};

/// Gaussian Matrix-NMS over whole-instance masks. Instances keep their
/// order; only scores change (and the cutoff may remove some).
ParsingPrediction matrix_nms(const ParsingPrediction& prediction, const MatrixNmsOptions& opts = {});

/// Decay factor per instance (input order) before the cutoff.
std::vector<double> matrix_nms_decay(const ParsingPrediction& prediction, double sigma);

using Rgb = std::array<std::uint8_t, 3>;

/// Deterministic colour for (instance index, category id).
Rgb palette_color(int instance, int category);

/// 50/50 blend of the image and the palette colour on every predicted part
/// pixel; other pixels are copied.
RgbImage render_overlay(const RgbImage& image, const ParsingPrediction& prediction);

}  // namespace uniparser
