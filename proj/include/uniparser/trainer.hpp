// Copyright (C) 2026 The UniParser Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "uniparser/losses.hpp"
#include "uniparser/model.hpp"

namespace uniparser {

struct LrDrop {
    double fraction = 0.0;  // of total_steps
    double factor = 0.1;
};

struct TrainConfig {
    int batch_size = 8;
    double base_lr_per_sample = 6.25e-4;
    double momentum = 0.9;
    int warmup_iters = 500;
    int total_steps = 0;
    std::vector<LrDrop> lr_drops{{0.75, 0.1}, {11.0 / 12.0, 0.1}};
    std::uint64_t seed = 0;
    // Forces single-threaded execution; results are then bitwise reproducible.
    bool grad_check_mode = false;
};

void validate(const TrainConfig& cfg);

/// lr_full = base_lr_per_sample · batch_size, ramped linearly from
/// lr_full / 100 at step 0 to lr_full at warmup_iters, then multiplied by
/// each drop factor from step floor(fraction · total_steps) on.
double learning_rate(const TrainConfig& cfg, int step);

struct StepRecord {
    int step = 0;
    LossReport loss;  // mean over the batch
    double lr = 0.0;
};

/// Ground truth of one sample at the resolutions the heads work in.
struct SampleTargets {
    std::vector<InstanceGT> instances;
    std::vector<std::vector<GridCoord>> regions;  // positive centre cells per instance
    CenterHeatmap heat;
    int feat_h = 0;
    int feat_w = 0;
    std::vector<Mask> instance_masks;              // per instance, feature resolution
    std::vector<MapTarget> category_masks;         // per category, nullopt when absent
    std::vector<std::vector<MapTarget>> part_masks;  // [instance][category]
};

SampleTargets build_targets(const ParsingSample& sample, const ModelConfig& cfg);

/// Instance id (1-based) for each selected cell, or -1. A cell inside an
/// instance's centre region maps to it (nearest barycentre on overlap); a
/// cell within one cell (Chebyshev) of some region maps to the closest such
/// region; anything else is excluded.
std::vector<int> assign_kernels_to_instances(std::span<const GridCoord> cells,
                                             std::span<const std::vector<GridCoord>> regions,
                                             std::span<const InstanceGT> instances, int grid, int image_h,
                                             int image_w);

/// Training-time centre cells: union of GT regions and cells above theta_c.
std::vector<GridCoord> training_cells(const SampleTargets& targets, const Tensor& heat, double theta_c);

struct SampleLoss {
    TotalLoss loss;
    std::vector<GridCoord> cells;
    std::vector<int> assignment;
};

/// Forward pass and all loss terms for one sample.
SampleLoss sample_loss(const Model& model, const ParsingSample& sample, const SampleTargets& targets);

using StepCallback = std::function<void(const StepRecord&)>;

/// SGD with momentum (v ← μv + g, p ← p − lr·v) over shuffled mini-batches.
/// Throws NonFiniteLoss with the step index and the report.
std::vector<StepRecord> train(const std::vector<ParsingSample>& dataset, Model& model, const TrainConfig& cfg,
                              const StepCallback& on_step = {});

void write_history_csv(const std::filesystem::path& path, std::span<const StepRecord> history);

// Checkpoint: directory with manifest.txt (model config and parameter
// index) and one binary file per parameter.
void save_checkpoint(const Model& model, const std::filesystem::path& dir);
Model load_checkpoint(const std::filesystem::path& dir);

}  // namespace uniparser
