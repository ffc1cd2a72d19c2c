// Copyright (C) 2026 The UniParser Authors
// SPDX-License-Identifier: Apache-2.0

#include "uniparser/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <set>

namespace uniparser {

namespace {

double part_iou(const PartMasks& a, const PartMasks& b, int cat) {
    auto ia = a.find(cat);
    auto ib = b.find(cat);
    if (ia == a.end() || ib == b.end()) return 0.0;
    return mask_iou(ia->second, ib->second);
}

}  // namespace

double instance_part_score(const PartMasks& pred, const PartMasks& gt) {
    std::set<int> cats;
    for (const auto& [c, m] : pred) cats.insert(c);
    for (const auto& [c, m] : gt) cats.insert(c);
    if (cats.empty()) return 0.0;
    double s = 0.0;
    for (int c : cats) s += part_iou(pred, gt, c);
    return s / static_cast<double>(cats.size());
}

ImageEval make_image_eval(const ParsingPrediction& prediction, const ParsingSample& sample) {
    ImageEval e;
    e.predictions = prediction.instances;
    for (auto& inst : instance_part_masks(sample)) e.ground_truth.push_back(std::move(inst.part_masks));
    return e;
}

MatchResult match_greedy(std::span<const ImageEval> images, double threshold) {
    MatchResult r;
    std::vector<MatchResult::Detection> dets;
    for (std::size_t im = 0; im < images.size(); ++im) {
        r.num_gt += images[im].ground_truth.size();
        for (std::size_t p = 0; p < images[im].predictions.size(); ++p) {
            dets.push_back({im, p, images[im].predictions[p].score, -1});
        }
    }
    std::stable_sort(dets.begin(), dets.end(), [](const auto& a, const auto& b) { return a.score > b.score; });

    std::vector<std::vector<bool>> taken(images.size());
    for (std::size_t im = 0; im < images.size(); ++im) taken[im].assign(images[im].ground_truth.size(), false);

    for (auto& d : dets) {
        const auto& img = images[d.image];
        const auto& pred = img.predictions[d.prediction].part_masks;
        int best = -1;
        double best_score = -1.0;
        for (std::size_t g = 0; g < img.ground_truth.size(); ++g) {
            if (taken[d.image][g]) continue;
            const double s = instance_part_score(pred, img.ground_truth[g]);
            if (s > best_score) best = static_cast<int>(g), best_score = s;
        }
        if (best >= 0 && best_score > threshold) {
            d.gt = best;
            taken[d.image][best] = true;
        }
    }
    r.detections = std::move(dets);
    return r;
}

double average_precision(const MatchResult& match) {
    if (match.num_gt == 0) return match.detections.empty() ? 1.0 : 0.0;
    const std::size_t n = match.detections.size();
    std::vector<double> precision(n);
    std::size_t tp = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (match.detections[i].gt >= 0) ++tp;
        precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    }
    // Every true positive raises recall by 1/num_gt, so the area is the sum of
    // the precision envelope at those ranks over num_gt.
    for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
    double area = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (match.detections[i].gt >= 0) area += precision[i];
    }
    return area / static_cast<double>(match.num_gt);
}

double ap_p(std::span<const ImageEval> images, double threshold) {
    return average_precision(match_greedy(images, threshold));
}

std::vector<double> vol_thresholds() {
    std::vector<double> t;
    for (int k = 1; k <= 9; ++k) t.push_back(k / 10.0);
    return t;
}

double ap_p_vol(std::span<const ImageEval> images) {
    double s = 0.0;
    const auto ts = vol_thresholds();
    for (double t : ts) s += ap_p(images, t);
    return s / static_cast<double>(ts.size());
}

namespace {

double pcp_from_match(std::span<const ImageEval> images, const MatchResult& match) {
    if (match.num_gt == 0) return 0.0;
    double total = 0.0;
    for (const auto& d : match.detections) {
        if (d.gt < 0) continue;
        const auto& gt = images[d.image].ground_truth[d.gt];
        const auto& pred = images[d.image].predictions[d.prediction].part_masks;
        if (gt.empty()) continue;
        int good = 0;
        for (const auto& [c, m] : gt) good += part_iou(pred, gt, c) > 0.5 ? 1 : 0;
        total += static_cast<double>(good) / static_cast<double>(gt.size());
    }
    return total / static_cast<double>(match.num_gt);
}

}  // namespace

double pcp_50(std::span<const ImageEval> images) { return pcp_from_match(images, match_greedy(images, 0.5)); }

EvalResult evaluate(std::span<const ImageEval> images) {
    EvalResult r;
    double vol = 0.0;
    const auto ts = vol_thresholds();
    for (double t : ts) {
        auto m = match_greedy(images, t);
        r.ap_p[t] = average_precision(m);
        vol += r.ap_p[t];
        if (t == 0.5) {
            r.pcp_50 = pcp_from_match(images, m);
            r.per_image.resize(images.size());
            for (std::size_t im = 0; im < images.size(); ++im) {
                r.per_image[im].num_predictions = images[im].predictions.size();
                r.per_image[im].num_gt = images[im].ground_truth.size();
            }
            for (const auto& d : m.detections) {
                if (d.gt >= 0) ++r.per_image[d.image].true_positives_50;
            }
        }
    }
    r.ap_p_vol = vol / static_cast<double>(ts.size());
    return r;
}

}  // namespace uniparser
