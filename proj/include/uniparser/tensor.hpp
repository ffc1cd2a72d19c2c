// Copyright (C) 2026 The UniParser Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace uniparser {

/// Allocator returning 64-byte aligned blocks. Vectorized reductions peel
/// elements according to the runtime address, so a fixed alignment keeps
/// results bitwise reproducible across runs.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept {
        return true;
    }
};

/// Dense row-major array of doubles with a dynamic shape. Value semantics.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape, double fill = 0.0);
    Tensor(std::vector<int> shape, std::vector<double> values);

    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

    const std::vector<int>& shape() const noexcept { return shape_; }
    int rank() const noexcept { return static_cast<int>(shape_.size()); }
    int dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // 2-D and 3-D element access; no bounds checks beyond debug asserts.
    double& at(int r, int c) { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }
    double at(int r, int c) const { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }
    double& at(int ch, int y, int x) {
        return data_[(static_cast<std::size_t>(ch) * shape_[1] + y) * shape_[2] + x];
    }
    double at(int ch, int y, int x) const {
        return data_[(static_cast<std::size_t>(ch) * shape_[1] + y) * shape_[2] + x];
    }

    /// Same data, new shape with identical element count.
    Tensor reshaped(std::vector<int> shape) const;
    void fill(double v);
    bool all_finite() const;

    bool operator==(const Tensor& other) const = default;

private:
    std::vector<int> shape_;
    std::vector<double, AlignedAllocator<double>> data_;
};

std::size_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

/// H×W array of small integers or flags (labels, masks).
template <typename T>
struct Grid {
    int height = 0;
    int width = 0;
    std::vector<T> data;

    Grid() = default;
    Grid(int h, int w, T fill = T{}) : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

    T& operator()(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
    const T& operator()(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const noexcept { return data.size(); }

    bool operator==(const Grid&) const = default;
};

using Mask = Grid<std::uint8_t>;
using LabelMap = Grid<std::int32_t>;

std::size_t count(const Mask& mask);
double mask_iou(const Mask& a, const Mask& b);

}  // namespace uniparser
