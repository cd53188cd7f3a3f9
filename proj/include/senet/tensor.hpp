// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "senet/common.hpp"

namespace senet {

/// Dense row-major float32 array, rank 1..4. Activations use N x C x H x W.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::vector<int> shape, std::vector<float> data);

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int> shape, float value);
    static Tensor scalar(float value) { return Tensor({1}, {value}); }

    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    const std::vector<int>& shape() const { return shape_; }
    std::size_t numel() const { return data_.size(); }
    bool defined() const { return !shape_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    void fill(float value);
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

    /// Throws ValidationError when any element is NaN/Inf; `what` names the op.
    void require_finite(const char* what) const;

private:
    std::vector<int> shape_;
    std::vector<float> data_;
};

std::size_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

} // namespace senet
