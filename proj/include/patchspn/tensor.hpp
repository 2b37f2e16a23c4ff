#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "patchspn/errors.hpp"

namespace patchspn {

// Dense n-dimensional row-major array of doubles. The universal numeric
// carrier for patches, activations, latents, and parameter blocks.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
        check_dims(shape_);
    }

    static Tensor from_data(std::vector<std::size_t> shape, std::vector<double> data) {
        check_dims(shape);
        if (shape_size(shape) != data.size()) {
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        }
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = std::move(data);
        return t;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    // Same storage, new dims; sizes must agree.
    Tensor reshaped(std::vector<std::size_t> new_shape) const {
        if (shape_size(new_shape) != data_.size()) {
            throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(new_shape));
        }
        Tensor t;
        t.shape_ = std::move(new_shape);
        t.data_ = data_;
        return t;
    }

    bool all_finite() const {
        for (const double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    static std::size_t shape_size(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (const std::size_t d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }

    static std::string shape_str(const std::vector<std::size_t>& shape) {
        std::string s = "(";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ", ";
            s += std::to_string(shape[i]);
        }
        return s + ")";
    }

private:
    static void check_dims(const std::vector<std::size_t>& shape) {
        for (const std::size_t d : shape)
            if (d == 0) throw ShapeError("zero-sized dimension in shape " + shape_str(shape));
    }

    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(what) + ": expected shape " + Tensor::shape_str(a.shape()) +
                         ", got " + Tensor::shape_str(b.shape()));
    }
}

}  // namespace patchspn
