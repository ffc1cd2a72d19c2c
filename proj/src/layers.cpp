// Copyright (C) 2026 The UniParser Authors
// SPDX-License-Identifier: Apache-2.0

#include "uniparser/layers.hpp"

#include <cmath>

namespace uniparser::nn {

Tensor Initializer::normal(std::vector<int> shape, double stddev) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.values()) v = dist(rng_);
    return t;
}

Tensor Initializer::he_normal(std::vector<int> shape, int fan_in) {
    return normal(std::move(shape), std::sqrt(2.0 / std::max(1, fan_in)));
}

Var parameter(Tensor value) { return Var(std::move(value), true); }

int group_count(int channels) {
    const int cap = std::max(1, std::min(32, channels / 4));
    for (int g = cap; g > 1; --g) {
        if (channels % g == 0) return g;
    }
    return 1;
}

Conv2d Conv2d::make(Initializer& init, int in, int out, int kernel, int stride, double weight_std) {
    Conv2d c;
    const std::vector<int> shape{out, in, kernel, kernel};
    c.weight = parameter(weight_std > 0 ? init.normal(shape, weight_std) : init.he_normal(shape, in * kernel * kernel));
    c.bias = parameter(Tensor({out}));
    c.stride = stride;
    c.padding = kernel / 2;
    return c;
}

void Conv2d::collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

ConvNormAct ConvNormAct::make(Initializer& init, int in, int out, int kernel, int stride, bool activate) {
    ConvNormAct l;
    l.conv = Conv2d::make(init, in, out, kernel, stride);
    l.gamma = parameter(Tensor({out}, 1.0));
    l.beta = parameter(Tensor({out}));
    l.groups = group_count(out);
    l.activate = activate;
    return l;
}

Var ConvNormAct::operator()(const Var& x) const {
    Var y = group_norm(conv(x), gamma, beta, groups);
    return activate ? relu(y) : y;
}

void ConvNormAct::collect(const std::string& prefix, ParamList& out) const {
    conv.collect(prefix + ".conv", out);
    out.push_back({prefix + ".gn.gamma", gamma});
    out.push_back({prefix + ".gn.beta", beta});
}

Tower Tower::make(Initializer& init, int in, int channels, int depth, bool activate_last) {
    Tower t;
    for (int i = 0; i < depth; ++i) {
        t.layers.push_back(ConvNormAct::make(init, i == 0 ? in : channels, channels, 3, 1,
                                             activate_last || i + 1 < depth));
    }
    return t;
}

Var Tower::operator()(const Var& x) const {
    Var y = x;
    for (const auto& l : layers) y = l(y);
    return y;
}

void Tower::collect(const std::string& prefix, ParamList& out) const {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + "." + std::to_string(i), out);
}

}  // namespace uniparser::nn
