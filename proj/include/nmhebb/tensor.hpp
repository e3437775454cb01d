#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nmhebb/errors.hpp"

namespace nmhebb {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s);

// Dense row-major array. No gradient bookkeeping lives here: gradients are
// owned by the graph node that holds the tensor.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)), data_(numel(shape_), fill) {}
    Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
        if (numel(shape_) != data_.size())
            throw ShapeError("tensor: shape " + shape_str(shape_) + " holds " + std::to_string(numel(shape_)) +
                             " values, got " + std::to_string(data_.size()));
    }

    const Shape& shape() const { return shape_; }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    // Same storage, new extents; element count must match.
    void reshape(Shape s) {
        if (numel(s) != data_.size()) throw ShapeError("reshape: " + shape_str(shape_) + " -> " + shape_str(s));
        shape_ = std::move(s);
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return out;
    }

    bool operator==(const Tensor& o) const = default;

private:
    Shape shape_;
    std::vector<T> data_;
};

// True iff every value is finite.
template <typename T>
bool all_finite(std::span<const T> v);

}  // namespace nmhebb
