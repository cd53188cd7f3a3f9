// SPDX-License-Identifier: Apache-2.0
#include "senet/tensor.hpp"

#include <cmath>
#include <sstream>

namespace senet {

std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) {
            throw ValidationError("tensor dimension must be positive, got shape " + shape_str(shape));
        }
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    if (shape_.size() < 1 || shape_.size() > 4) {
        throw ValidationError("tensor rank must be 1..4, got " + shape_str(shape_));
    }
    data_.assign(shape_numel(shape_), 0.0f);
}

Tensor::Tensor(std::vector<int> shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_.size() < 1 || shape_.size() > 4) {
        throw ValidationError("tensor rank must be 1..4, got " + shape_str(shape_));
    }
    if (data_.size() != shape_numel(shape_)) {
        throw ValidationError("tensor data length " + std::to_string(data_.size()) +
                              " does not match shape " + shape_str(shape_));
    }
}

Tensor Tensor::full(std::vector<int> shape, float value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
}

void Tensor::fill(float value) {
    for (auto& v : data_) v = value;
}

bool Tensor::all_finite() const {
    for (float v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor::require_finite(const char* what) const {
    if (!all_finite()) {
        throw RuntimeError(std::string(what) + ": non-finite value in tensor " + shape_str(shape_));
    }
}

} // namespace senet
