#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <vector>

#include "gcae/common.hpp"

namespace gcae {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

// Dense float32 array with shared storage. Copies are shallow; mut()
// detaches when the buffer is shared, so a Tensor handed to a Graph leaf
// stays stable even if the caller later updates the parameter in place.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<float>>(static_cast<size_t>(shape_numel(shape_)), 0.0f)) {}

    Tensor(Shape shape, std::vector<float> values) : shape_(std::move(shape)) {
        if (static_cast<int64_t>(values.size()) != shape_numel(shape_))
            throw ShapeError("tensor init: " + std::to_string(values.size()) + " values for shape " + shape_str(shape_));
        data_ = std::make_shared<std::vector<float>>(std::move(values));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, float v) {
        Tensor t(std::move(shape));
        std::fill(t.data_->begin(), t.data_->end(), v);
        return t;
    }

    static Tensor scalar(float v) { return Tensor({1}, {v}); }

    bool defined() const { return data_ != nullptr; }
    const Shape& shape() const { return shape_; }
    int64_t numel() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }
    int64_t ndim() const { return static_cast<int64_t>(shape_.size()); }

    // 2-D conveniences; a vector is 1 x n for kernel purposes.
    int64_t rows() const { return shape_.size() == 2 ? shape_[0] : 1; }
    int64_t cols() const { return shape_.size() == 2 ? shape_[1] : numel(); }

    const float* ptr() const { return data_->data(); }
    float* mut() {
        if (data_.use_count() > 1) data_ = std::make_shared<std::vector<float>>(*data_);
        return data_->data();
    }

    float at(int64_t i) const { return (*data_)[static_cast<size_t>(i)]; }
    float at(int64_t r, int64_t c) const { return (*data_)[static_cast<size_t>(r * cols() + c)]; }
    float item() const {
        if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape_));
        return (*data_)[0];
    }

    // Shares storage; only the shape changes.
    Tensor reshaped(Shape s) const {
        if (shape_numel(s) != numel())
            throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(s));
        Tensor t;
        t.shape_ = std::move(s);
        t.data_ = data_;
        return t;
    }

    bool all_finite() const {
        for (float v : *data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    const std::vector<float>& vec() const { return *data_; }

private:
    Shape shape_;
    std::shared_ptr<std::vector<float>> data_;
};

}  // namespace gcae
