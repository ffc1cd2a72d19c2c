// Copyright (C) 2026 The UniParser Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <memory>
#include <span>

#include "uniparser/features.hpp"
#include "uniparser/heads.hpp"

namespace uniparser {

struct ModelConfig {
    BackboneConfig backbone;
    HyperParams hp;
    int n_categories = 4;
    std::uint64_t seed = 0;
};

void validate(const ModelConfig& cfg);

/// Everything the losses and the decoder need from one image.
struct ForwardOutputs {
    nn::Var f_neck;
    nn::Var heat;    // 1×S×S
    nn::Var f_ins;   // embedded, C×H'×W'
    nn::Var f_cate;  // embedded, C×H'×W'
    nn::Var k_cate;  // embedded category kernels, N_cate×C
    nn::Var q_cate;  // N_cate×(H'·W')
};

/// Per-kernel outputs for a chosen set of centre cells.
struct InstanceOutputs {
    nn::Var kernels;    // N_c×C
    nn::Var q_ins;      // N_c×(H'·W')
    nn::Var q_parsing;  // (N_c·N_cate)×(H'·W')
};

/// Backbone, neck, the three heads, category kernels and (for the convs
/// and multi modes) the fusion tower. Parameters are shared handles, so a
/// Model is move-only.
class Model {
public:
    explicit Model(const ModelConfig& cfg);
    Model(Model&&) noexcept;
    Model& operator=(Model&&) noexcept;
    ~Model();

    const ModelConfig& config() const { return cfg_; }
    const nn::ParamList& parameters() const { return params_; }

    ForwardOutputs forward(const Tensor& image) const;
    /// Empty `cells` gives zero-row outputs (undefined Vars).
    InstanceOutputs instances(const ForwardOutputs& out, std::span<const GridCoord> cells) const;

private:
    struct Parts;
    ModelConfig cfg_;
    std::unique_ptr<Parts> parts_;
    nn::ParamList params_;
};

}  // namespace uniparser
