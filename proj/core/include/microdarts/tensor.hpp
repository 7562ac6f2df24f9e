#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "microdarts/errors.hpp"

namespace microdarts {

inline int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
    std::string s = "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

// Dense n-d array with an optional gradient slot of identical length.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape)
        : shape_(std::move(shape)) {
        validate_shape();
        values_.assign(static_cast<size_t>(shape_numel(shape_)), T{0});
    }

    Tensor(std::vector<int> shape, std::vector<T> values)
        : shape_(std::move(shape)), values_(std::move(values)) {
        validate_shape();
        if (static_cast<int64_t>(values_.size()) != shape_numel(shape_))
            throw StructuralError("tensor: " + std::to_string(values_.size()) +
                                  " values for shape " + shape_str(shape_));
    }

    static Tensor scalar(T v) { return Tensor({1}, {v}); }

    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(values_.size()); }

    T* data() { return values_.data(); }
    const T* data() const { return values_.data(); }
    std::vector<T>& values() { return values_; }
    const std::vector<T>& values() const { return values_; }

    bool has_grad() const { return !grad_.empty(); }
    std::vector<T>& ensure_grad() {
        if (grad_.empty()) grad_.assign(values_.size(), T{0});
        return grad_;
    }
    std::vector<T>& grad() {
        if (grad_.empty()) throw StateError("tensor: grad accessed before backward");
        return grad_;
    }
    const std::vector<T>& grad() const {
        if (grad_.empty()) throw StateError("tensor: grad accessed before backward");
        return grad_;
    }
    void drop_grad() { grad_.clear(); }

    bool all_finite() const {
        for (const T v : values_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    double sq_norm() const {
        double s = 0.0;
        for (const T v : values_) s += static_cast<double>(v) * static_cast<double>(v);
        return s;
    }
    double l2_norm() const { return std::sqrt(sq_norm()); }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(values_.size());
        for (size_t i = 0; i < values_.size(); ++i) out[i] = static_cast<U>(values_[i]);
        return Tensor<U>(shape_, std::move(out));
    }

private:
    void validate_shape() const {
        for (int d : shape_)
            if (d <= 0) throw StructuralError("tensor: non-positive dim in " + shape_str(shape_));
    }

    std::vector<int> shape_;
    std::vector<T> values_;
    std::vector<T> grad_;  // empty means absent
};

}  // namespace microdarts
