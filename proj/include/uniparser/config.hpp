// Copyright (C) 2026 The UniParser Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "uniparser/model.hpp"
#include "uniparser/synthgen.hpp"
#include "uniparser/trainer.hpp"

namespace uniparser {

/// Everything one experiment needs, read from a sectioned key = value file:
/// [synth], [backbone], [model], [train], [paths], [ablate].
struct ExperimentConfig {
    SynthSpec synth;
    int synth_count = 8;
    ModelConfig model;
    TrainConfig train;
    std::filesystem::path dataset_dir;  // training set
    std::filesystem::path out_dir;      // checkpoints, history, reports
    int log_every = 100;
    std::vector<std::string> ablate_variants{"default",    "no_metric", "inner",      "inner_sigmoid_after",
                                             "inner_sigmoid_before", "convs", "multi"};
    int ablate_val_count = 50;
    std::uint64_t ablate_val_seed = 1007;
};

/// Relative paths resolve against the config file's directory. Unknown
/// sections or keys and malformed values throw BadConfig.
ExperimentConfig load_config(const std::filesystem::path& path);

/// Same, from text; relative paths resolve against `base_dir`.
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir);

/// Sets every seed (synthesis, initialization, data order).
void override_seed(ExperimentConfig& cfg, std::uint64_t seed);

/// Applies a named ablation variant to the model settings. Throws BadConfig
/// for unknown names.
ModelConfig variant_model_config(const ModelConfig& base, const std::string& variant);

}  // namespace uniparser
