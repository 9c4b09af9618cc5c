#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace flora {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_product(const Shape& shape);

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

template <typename T>
constexpr DType dtype_of() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                  "tensors hold float or double");
    return std::is_same_v<T, float> ? DType::F32 : DType::F64;
}

/// Dense row-major array of rank 1..4. Image batches use N x H x W x C.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T{}) : shape_(std::move(shape)) {
        validate_shape(shape_);
        data_.assign(shape_product(shape_), fill);
    }

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape(shape_);
        if (data_.size() != shape_product(shape_)) {
            throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                        " does not match shape " + shape_str(shape_));
        }
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    // N x H x W x C indexing for rank-4 tensors.
    T& at(std::size_t n, std::size_t h, std::size_t w, std::size_t c) {
        return data_[((n * shape_[1] + h) * shape_[2] + w) * shape_[3] + c];
    }
    const T& at(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const {
        return data_[((n * shape_[1] + h) * shape_[2] + w) * shape_[3] + c];
    }

    Tensor reshaped(Shape shape) const {
        return Tensor(std::move(shape), data_);
    }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    bool all_finite() const;

    bool operator==(const Tensor& other) const = default;

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

private:
    static void validate_shape(const Shape& shape) {
        if (shape.empty() || shape.size() > 4) {
            throw std::invalid_argument("tensor rank must be 1..4, got " + std::to_string(shape.size()));
        }
        for (auto extent : shape) {
            if (extent == 0) {
                throw std::invalid_argument("tensor extents must be >= 1, got " + shape_str(shape));
            }
        }
    }

    Shape shape_;
    std::vector<T> data_;
};

enum class ElementwiseOp { Add, Sub, Mul, Maximum };

template <typename T>
Tensor<T> elementwise(ElementwiseOp op, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> elementwise(ElementwiseOp op, const Tensor<T>& a, T scalar);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(ElementwiseOp::Add, a, b); }
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(ElementwiseOp::Sub, a, b); }
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(ElementwiseOp::Mul, a, b); }
template <typename T>
Tensor<T> maximum(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(ElementwiseOp::Maximum, a, b); }
template <typename T>
Tensor<T> maximum(const Tensor<T>& a, T scalar) { return elementwise(ElementwiseOp::Maximum, a, scalar); }
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) { return elementwise(ElementwiseOp::Mul, a, factor); }

/// Reduces over the given axes; the result drops those axes (rank-0 results become shape {1}).
template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& t, const std::vector<std::size_t>& axes);
template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& t, const std::vector<std::size_t>& axes);

template <typename T>
T sum_all(const Tensor<T>& t) {
    return std::accumulate(t.vec().begin(), t.vec().end(), T{0});
}

// Lowest index wins ties.
template <typename T>
std::size_t argmax(std::span<const T> values) {
    if (values.empty()) {
        throw std::invalid_argument("argmax of empty range");
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) best = i;
    }
    return best;
}

/// Row-wise argmax over the last axis of a rank-2 tensor.
template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& t);

}  // namespace flora
