// Copyright (C) 2026 The UniParser Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "uniparser/tensor.hpp"

namespace uniparser::nn {

/// One vertex of the reverse-mode tape. `backward` reads `grad` and
/// accumulates into the parents' gradient buffers.
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    /// Gradient buffer, zero-allocated on first use.
    Tensor& grad_buffer();
};

/// Handle to a node. Copies share the node.
class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    bool defined() const noexcept { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    // Handles are shallow: mutating the shared node does not change the handle.
    Tensor& mutable_value() const { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
    const std::vector<int>& shape() const { return node_->value.shape(); }
    int dim(int axis) const { return node_->value.dim(axis); }
    double item() const { return node_->value[0]; }
    const std::shared_ptr<Node>& node() const noexcept { return node_; }

    void zero_grad() const;

private:
    std::shared_ptr<Node> node_;
};

/// Builds an op result. When gradients are disabled or no parent needs
/// them, the result is a constant and `backward` is dropped.
Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward);

/// Runs reverse accumulation from a scalar root (seed gradient 1).
void backward(const Var& root);

bool grad_enabled() noexcept;

/// Disables graph construction on this thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

}  // namespace uniparser::nn
