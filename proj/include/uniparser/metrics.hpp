// Copyright (C) 2026 The UniParser Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <span>
#include <vector>

#include "uniparser/datamodel.hpp"

namespace uniparser {

using PartMasks = std::map<int, Mask>;

/// Mean part IoU over the union of categories present in either instance.
double instance_part_score(const PartMasks& pred, const PartMasks& gt);

/// Predictions and ground truth of one image.
struct ImageEval {
    std::vector<InstancePrediction> predictions;
    std::vector<PartMasks> ground_truth;
};

/// Builds an ImageEval from a prediction and the sample's labels.
ImageEval make_image_eval(const ParsingPrediction& prediction, const ParsingSample& sample);

/// Outcome of greedy matching at one threshold, in global score order.
struct MatchResult {
    struct Detection {
        std::size_t image = 0;
        std::size_t prediction = 0;
        double score = 0.0;
        int gt = -1;  // matched GT index within the image, -1 for a false positive
    };
    std::vector<Detection> detections;
    std::size_t num_gt = 0;
};

/// Predictions are visited by descending score (ties: image, then index
/// order). Each takes the unmatched GT of its image with the highest part
/// score (ties: lowest index) and is a true positive iff that score exceeds
/// `threshold`; only true positives consume their GT.
MatchResult match_greedy(std::span<const ImageEval> images, double threshold);

/// Area under the all-point interpolated precision/recall curve.
/// No GTs: 1.0 without predictions, otherwise 0.0.
double average_precision(const MatchResult& match);

double ap_p(std::span<const ImageEval> images, double threshold);

/// Thresholds 0.1, 0.2, ..., 0.9.
std::vector<double> vol_thresholds();

double ap_p_vol(std::span<const ImageEval> images);

/// Σ over matched pairs (threshold 0.5) of the fraction of GT parts with
/// IoU > 0.5, divided by the number of GT instances. 0 without GTs.
double pcp_50(std::span<const ImageEval> images);

struct EvalResult {
    std::map<double, double> ap_p;  // threshold → AP
    double ap_p_vol = 0.0;
    double pcp_50 = 0.0;
    struct ImageDetail {
        std::size_t num_predictions = 0;
        std::size_t num_gt = 0;
        std::size_t true_positives_50 = 0;
    };
    std::vector<ImageDetail> per_image;

    double ap_p_50() const { return ap_p.at(0.5); }
};

EvalResult evaluate(std::span<const ImageEval> images);

}  // namespace uniparser
