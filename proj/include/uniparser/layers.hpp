// Copyright (C) 2026 The UniParser Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "uniparser/ops.hpp"

namespace uniparser::nn {

struct NamedParam {
    std::string name;
    Var var;
};

using ParamList = std::vector<NamedParam>;

/// Seeded source of initial weights.
class Initializer {
public:
    explicit Initializer(std::uint64_t seed) : rng_(seed) {}

    Tensor normal(std::vector<int> shape, double stddev);
    /// He-normal for a weight whose fan-in is `fan_in`.
    Tensor he_normal(std::vector<int> shape, int fan_in);

private:
    std::mt19937_64 rng_;
};

/// Trainable leaf.
Var parameter(Tensor value);

/// Largest divisor of `channels` not above min(32, channels / 4).
int group_count(int channels);

struct Conv2d {
    Var weight;
    Var bias;
    int stride = 1;
    int padding = 0;

    static Conv2d make(Initializer& init, int in, int out, int kernel, int stride, double weight_std = 0.0);
    Var operator()(const Var& x) const { return conv2d(x, weight, bias, stride, padding); }
    void collect(const std::string& prefix, ParamList& out) const;
    int out_channels() const { return weight.dim(0); }
};

/// conv → group norm → optional ReLU.
struct ConvNormAct {
    Conv2d conv;
    Var gamma;
    Var beta;
    int groups = 1;
    bool activate = true;

    static ConvNormAct make(Initializer& init, int in, int out, int kernel, int stride, bool activate = true);
    Var operator()(const Var& x) const;
    void collect(const std::string& prefix, ParamList& out) const;
};

/// Stack of 3×3 ConvNormAct layers at constant width.
struct Tower {
    std::vector<ConvNormAct> layers;

    static Tower make(Initializer& init, int in, int channels, int depth, bool activate_last = true);
    Var operator()(const Var& x) const;
    void collect(const std::string& prefix, ParamList& out) const;
};

}  // namespace uniparser::nn
